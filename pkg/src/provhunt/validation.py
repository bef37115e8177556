"""Input checks shared by the estimators and the CLI."""

from __future__ import annotations

import numbers
from typing import Iterable, Mapping

import numpy as np

from provhunt.errors import InvalidInputError
from provhunt.graph import ProvenanceGraph, Subgraph, ingest_audit_log
from provhunt.synthesis import PairedSample


def check_random_state(seed) -> np.random.Generator:
    """None, an int, or an existing Generator -> Generator."""
    if seed is None:
        return np.random.default_rng()
    if isinstance(seed, np.random.Generator):
        return seed
    if isinstance(seed, numbers.Integral) and seed >= 0:
        return np.random.Generator(np.random.PCG64(int(seed)))
    raise InvalidInputError(f"cannot make a random generator from {seed!r}")


def check_graph(X) -> ProvenanceGraph:
    """Accept a graph, its dict form, or an iterable of audit records."""
    if isinstance(X, ProvenanceGraph):
        return X
    if isinstance(X, Mapping):
        return ProvenanceGraph.from_dict(X)
    if isinstance(X, (str, bytes)):
        raise InvalidInputError("pass audit records or a graph, not a bare string")
    return ingest_audit_log(X)


def check_subgraphs(X, allow_empty: bool = False) -> list[Subgraph]:
    if isinstance(X, Subgraph):
        X = [X]
    out = []
    for item in X:
        if isinstance(item, Mapping):
            item = Subgraph.from_dict(item)
        if not isinstance(item, Subgraph):
            raise InvalidInputError(f"expected Subgraph, got {type(item).__name__}")
        out.append(item)
    if not out and not allow_empty:
        raise InvalidInputError("no subgraphs given")
    return out


def check_pairs(X, min_pairs: int = 1) -> list[PairedSample]:
    out = [PairedSample.from_dict(p) if isinstance(p, Mapping) else p for p in X]
    for p in out:
        if not isinstance(p, PairedSample):
            raise InvalidInputError(f"expected PairedSample, got {type(p).__name__}")
    if len(out) < min_pairs:
        raise InvalidInputError(f"need at least {min_pairs} paired samples, got {len(out)}")
    return out


def check_reports(ids: Iterable, texts: Iterable | None = None) -> tuple[list, list]:
    """Normalize a report corpus to parallel id/text lists.

    ``ids`` may also be a mapping id -> text, in which case ``texts`` is omitted.
    """
    if texts is None:
        if not isinstance(ids, Mapping):
            raise InvalidInputError("report corpus must be a mapping or ids plus texts")
        ids, texts = list(ids.keys()), list(ids.values())
    ids, texts = [str(i) for i in ids], list(texts)
    if len(ids) != len(texts):
        raise InvalidInputError("report ids and texts differ in length")
    if not ids:
        raise InvalidInputError("report corpus is empty")
    if len(set(ids)) != len(ids):
        raise InvalidInputError("report ids must be unique")
    for t in texts:
        if not isinstance(t, str) or not t.strip():
            raise InvalidInputError("report texts must be non-empty strings")
    return ids, texts


def check_is_fitted(estimator, attrs) -> None:
    from sklearn.exceptions import NotFittedError

    missing = [a for a in ([attrs] if isinstance(attrs, str) else attrs) if not hasattr(estimator, a)]
    if missing:
        raise NotFittedError(f"{type(estimator).__name__} is not fitted; call fit first")
