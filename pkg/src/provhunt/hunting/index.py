"""Flat exact vector index over report embeddings.

File layout (little-endian)::

    7 bytes   magic b"PHINDEX"
    uint32    n (rows)
    uint32    d (dimension)
    n times   uint32 byte length + UTF-8 report id
    n*d       float32 rows, row-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from provhunt.errors import InvalidInputError, SchemaError

MAGIC = b"PHINDEX"


@dataclass(frozen=True)
class Candidate:
    report_id: str
    similarity: float


class VectorIndex:
    """Report ids plus an (n, d) embedding matrix; rows are L2-normalized on entry
    when ``normalize`` is set, and a float64 unit-norm copy is cached for cosine search."""

    def __init__(self, ids: Sequence[str], vectors, normalize: bool = True):
        ids = [str(i) for i in ids]
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2 or vectors.shape[0] != len(ids):
            raise InvalidInputError("need one embedding row per report id")
        if len(set(ids)) != len(ids):
            raise InvalidInputError("report ids must be unique")
        if not np.isfinite(vectors).all():
            raise InvalidInputError("index rows must be finite")
        if normalize:
            vectors = _unit(vectors)
        self.ids = ids
        self.vectors = vectors
        self._unit = _unit(vectors.astype(np.float64))
        self._rank = np.argsort(np.array(ids, dtype=object), kind="stable")

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def to_bytes(self) -> bytes:
        parts = [MAGIC, struct.pack("<II", len(self.ids), self.dim)]
        for rid in self.ids:
            raw = rid.encode("utf-8")
            parts.append(struct.pack("<I", len(raw)) + raw)
        parts.append(self.vectors.astype("<f4").tobytes(order="C"))
        return b"".join(parts)

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "VectorIndex":
        if data[:7] != MAGIC:
            raise SchemaError("not an index file (bad magic)")
        n, d = struct.unpack_from("<II", data, 7)
        pos, ids = 15, []
        for _ in range(n):
            (length,) = struct.unpack_from("<I", data, pos)
            ids.append(data[pos + 4:pos + 4 + length].decode("utf-8"))
            pos += 4 + length
        if len(data) - pos != 4 * n * d:
            raise SchemaError("index payload size does not match header")
        rows = np.frombuffer(data, dtype="<f4", offset=pos).reshape(n, d)
        return cls(ids, rows.astype(np.float32), normalize=False)

    @classmethod
    def load(cls, path) -> "VectorIndex":
        return cls.from_bytes(Path(path).read_bytes())


def _unit(x: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(x, axis=1, keepdims=True)
    return np.where(norms > 0, x / np.where(norms > 0, norms, 1), 0).astype(x.dtype)


def build_index(report_ids: Sequence[str], texts: Sequence[str], model, normalize: bool = True) -> VectorIndex:
    """Embed report texts with the model's text encoder."""
    if not len(texts):
        raise InvalidInputError("cannot index an empty corpus")
    if len(report_ids) != len(texts):
        raise InvalidInputError("report ids and texts differ in length")
    return VectorIndex(report_ids, model.embed_texts(list(texts)), normalize=normalize)


def coarse_retrieve(index: VectorIndex, query, k: int = 10) -> list[Candidate]:
    """Exact top-k by cosine similarity; ties go to the smaller report id."""
    if k < 1:
        raise InvalidInputError("k must be >= 1")
    if not len(index):
        raise InvalidInputError("index is empty")
    q = np.asarray(query, dtype=np.float64).reshape(-1)
    if q.shape[0] != index.dim:
        raise InvalidInputError(f"query dimension {q.shape[0]} != index dimension {index.dim}")
    norm = np.linalg.norm(q)
    q = q / norm if norm > 0 else q
    sims = index._unit @ q
    # order by id rank first, then a stable sort on -similarity keeps id order within ties
    by_id = index._rank
    order = by_id[np.argsort(-sims[by_id], kind="stable")][:k]
    return [Candidate(index.ids[i], float(sims[i])) for i in order]
