"""Confusion binning, detection metrics, and alert-validation rates."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable, Mapping

from provhunt.errors import InvalidInputError

TP, FP, TN, FN = "tp", "fp", "tn", "fn"


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.tn, self.fn) < 0:
            raise InvalidInputError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GraphOutcome:
    """Raw facts for one graph plus the bin it was assigned to."""

    graph_id: str
    paired_report: str | None
    matched: tuple
    bin: str

    @property
    def paired_matched(self) -> bool:
        return self.paired_report is not None and self.paired_report in self.matched

    def to_dict(self) -> dict:
        return {"graph_id": self.graph_id, "paired_report": self.paired_report,
                "matched": list(self.matched), "paired_matched": self.paired_matched, "bin": self.bin}


def bin_outcome(paired_report: str | None, matched: set) -> str:
    """Exactly one bin per graph.

    Benign: TN if nothing matched, else FP. Malicious: TP when the matched
    set is exactly the paired report; FP when the pair is matched together
    with extras; FN when the pair is not matched at all.
    """
    if paired_report is None:
        return TN if not matched else FP
    if paired_report not in matched:
        return FN
    return TP if matched == {paired_report} else FP


def classify(decisions: Iterable, truth: Mapping[str, str | None]) -> tuple[ConfusionCounts, list]:
    """Bin each decision against ground truth (graph id -> paired report id, None if benign)."""
    tally = {TP: 0, FP: 0, TN: 0, FN: 0}
    outcomes = []
    for d in decisions:
        if d.graph_id not in truth:
            raise InvalidInputError(f"no ground truth for graph {d.graph_id!r}")
        paired = truth[d.graph_id]
        matched = d.matched_ids
        b = bin_outcome(paired, matched)
        tally[b] += 1
        outcomes.append(GraphOutcome(d.graph_id, paired, tuple(sorted(matched)), b))
    return ConfusionCounts(**tally), outcomes


def _ratio(num: int, den: int, reason: str, reasons: dict, name: str) -> float | None:
    if den == 0:
        reasons[name] = reason
        return None
    return num / den


@dataclass(frozen=True)
class Metrics:
    recall: float | None
    precision: float | None
    accuracy: float | None
    fpr: float | None
    f1: float | None
    tnr: float | None
    counts: ConfusionCounts = field(default_factory=ConfusionCounts)
    undefined: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"recall": self.recall, "precision": self.precision, "accuracy": self.accuracy,
                "fpr": self.fpr, "f1": self.f1, "tnr": self.tnr,
                "counts": self.counts.to_dict(), "undefined": dict(self.undefined)}


def compute_metrics(counts: ConfusionCounts) -> Metrics:
    """Undefined ratios are None with the reason recorded, never zero by convention."""
    tp, fp, tn, fn = counts.tp, counts.fp, counts.tn, counts.fn
    why: dict = {}
    recall = _ratio(tp, tp + fn, "tp + fn = 0 (no malicious graphs)", why, "recall")
    precision = _ratio(tp, tp + fp, "tp + fp = 0 (nothing flagged)", why, "precision")
    accuracy = _ratio(tp + tn, counts.total, "no graphs evaluated", why, "accuracy")
    fpr = _ratio(fp, fp + tn, "fp + tn = 0 (no benign graphs)", why, "fpr")
    tnr = _ratio(tn, fp + tn, "fp + tn = 0 (no benign graphs)", why, "tnr")
    if precision is None or recall is None:
        f1 = None
        why["f1"] = "precision or recall undefined"
    elif precision + recall == 0:
        f1 = None
        why["f1"] = "precision + recall = 0"
    else:
        f1 = 2 * precision * recall / (precision + recall)
    return Metrics(recall, precision, accuracy, fpr, f1, tnr, counts, why)


@dataclass(frozen=True)
class AlertValidationMetrics:
    afr: float | None
    trr: float | None
    total_alerts: int
    filtered: int
    true_alerts: int
    retained_true: int
    undefined: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def compute_afr_trr(alerts: Iterable[str], decisions: Mapping[str, object],
                    truth: Mapping[str, bool]) -> AlertValidationMetrics:
    """An alert is filtered when its matched set is empty.

    ``truth`` maps alert id -> True for a real threat. AFR is filtered over
    all alerts; TRR is retained real threats over all real threats.
    """
    alerts = list(alerts)
    filtered = true_alerts = retained_true = 0
    for a in alerts:
        if a not in decisions:
            raise InvalidInputError(f"no decision for alert {a!r}")
        if a not in truth:
            raise InvalidInputError(f"no label for alert {a!r}")
        kept = bool(decisions[a].matches)
        filtered += not kept
        if truth[a]:
            true_alerts += 1
            retained_true += kept
    why: dict = {}
    afr = _ratio(filtered, len(alerts), "no alerts", why, "afr")
    trr = _ratio(retained_true, true_alerts, "no true alerts", why, "trr")
    return AlertValidationMetrics(afr, trr, len(alerts), filtered, true_alerts, retained_true, why)
