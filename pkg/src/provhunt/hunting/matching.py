"""Fine matching and the two-stage hunt."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping, Sequence

from provhunt.errors import ConfigurationError, InvalidInputError, NotFoundError
from provhunt.graph import Subgraph
from provhunt.hunting.index import Candidate, VectorIndex, coarse_retrieve

MATCH_PROB_CUT = 0.5
VERDICT_MATCH = "match"
VERDICT_NONE = "no-match"


@dataclass(frozen=True)
class RetrievalConfig:
    k: int = 10
    lam: float = 0.5

    def __post_init__(self):
        if self.k < 1:
            raise ConfigurationError("k must be >= 1")
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigurationError("lambda must lie in [0, 1]")


@dataclass(frozen=True)
class ScoredReport:
    report_id: str
    similarity: float
    prob: float

    def to_dict(self) -> dict:
        return {"report_id": self.report_id, "similarity": self.similarity, "prob": self.prob}


def is_match(similarity: float, prob: float, lam: float) -> bool:
    """Both conditions, strict: similarity above lambda and match probability above one half."""
    return similarity > lam and prob > MATCH_PROB_CUT


@dataclass
class MatchDecision:
    graph_id: str
    matches: list = field(default_factory=list)      # ScoredReport, matched only
    candidates: list = field(default_factory=list)   # every scored candidate, in retrieval order

    @property
    def matched_ids(self) -> set:
        return {m.report_id for m in self.matches}

    @property
    def verdict(self) -> str:
        return VERDICT_MATCH if self.matches else VERDICT_NONE

    def to_dict(self, include_candidates: bool = False) -> dict:
        out = {"graph_id": self.graph_id, "matches": [m.to_dict() for m in self.matches], "verdict": self.verdict}
        if include_candidates:
            out["candidates"] = [c.to_dict() for c in self.candidates]
        return out

    @classmethod
    def from_dict(cls, payload: Mapping) -> "MatchDecision":
        try:
            matches = [ScoredReport(str(m["report_id"]), float(m["similarity"]), float(m["prob"]))
                       for m in payload["matches"]]
            cands = [ScoredReport(str(m["report_id"]), float(m["similarity"]), float(m["prob"]))
                     for m in payload.get("candidates", [])]
            return cls(str(payload["graph_id"]), matches, cands)
        except (KeyError, TypeError, ValueError) as exc:
            raise InvalidInputError(f"malformed hunt record: {exc}") from None


def fine_match(model, subgraph: Subgraph, candidates: Sequence[Candidate], lam: float,
               texts: Mapping[str, str]) -> MatchDecision:
    """Score each candidate with the matching head and apply the decision rule."""
    decision = MatchDecision(subgraph.graph_id)
    if not candidates:
        return decision
    try:
        cand_texts = [texts[c.report_id] for c in candidates]
    except KeyError as exc:
        raise NotFoundError(f"no text for report {exc.args[0]!r}") from None
    probs = model.match_probabilities(subgraph, cand_texts)
    for c, p in zip(candidates, probs):
        scored = ScoredReport(c.report_id, float(c.similarity), float(p))
        decision.candidates.append(scored)
        if is_match(scored.similarity, scored.prob, lam):
            decision.matches.append(scored)
    return decision


def hunt(model, index: VectorIndex, subgraph: Subgraph, texts: Mapping[str, str],
         cfg: RetrievalConfig | None = None) -> MatchDecision:
    """Coarse top-k by cosine over the index, then fine matching."""
    cfg = cfg or RetrievalConfig()
    z_g = model.embed_graphs([subgraph])[0]
    return fine_match(model, subgraph, coarse_retrieve(index, z_g, cfg.k), cfg.lam, texts)


def hunt_many(model, index: VectorIndex, subgraphs: Sequence[Subgraph], texts: Mapping[str, str],
              cfg: RetrievalConfig | None = None) -> list[MatchDecision]:
    cfg = cfg or RetrievalConfig()
    subgraphs = list(subgraphs)
    if not subgraphs:
        return []
    z = model.embed_graphs(subgraphs)
    return [fine_match(model, sg, coarse_retrieve(index, z[i], cfg.k), cfg.lam, texts)
            for i, sg in enumerate(subgraphs)]
