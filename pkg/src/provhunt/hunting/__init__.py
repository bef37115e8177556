from provhunt.hunting.index import Candidate, VectorIndex, build_index, coarse_retrieve
from provhunt.hunting.matching import MatchDecision, RetrievalConfig, ScoredReport, fine_match, hunt, hunt_many, is_match
from provhunt.hunting.metrics import (
    AlertValidationMetrics,
    ConfusionCounts,
    Metrics,
    classify,
    compute_afr_trr,
    compute_metrics,
)

__all__ = [
    "AlertValidationMetrics", "Candidate", "ConfusionCounts", "MatchDecision", "Metrics",
    "RetrievalConfig", "ScoredReport", "VectorIndex", "build_index", "classify", "coarse_retrieve",
    "compute_afr_trr", "compute_metrics", "fine_match", "hunt", "hunt_many", "is_match",
]
