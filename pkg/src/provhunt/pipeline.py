"""Pipeline configuration, run manifest, and workdir artifact handling."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from filelock import FileLock

from provhunt import __version__
from provhunt.errors import ConfigurationError, InvalidInputError, ParseError
from provhunt.graph import Subgraph, read_jsonl
from provhunt.hunting import (
    AlertValidationMetrics,
    MatchDecision,
    RetrievalConfig,
    VectorIndex,
    compute_afr_trr,
    hunt_many,
)
from provhunt.neural.model import ModelConfig
from provhunt.sampling import SamplingConfig
from provhunt.training.config import TrainConfig, read_config_file

MANIFEST_NAME = "manifest.json"
LOCK_NAME = ".provhunt.lock"


def sha256_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def sha256_file(path) -> str:
    """Digest of a file, or of a directory's sorted (name, digest) listing."""
    path = Path(path)
    if path.is_dir():
        listing = [(str(p.relative_to(path)), sha256_file(p)) for p in sorted(path.rglob("*")) if p.is_file()]
        return sha256_bytes(json.dumps(listing).encode())
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _section(cls, payload: Mapping | None):
    payload = dict(payload or {})
    known = {f.name for f in fields(cls)}
    extra = set(payload) - known
    if extra:
        raise ConfigurationError(f"unknown keys in [{cls.__name__}]: {sorted(extra)}")
    try:
        return cls(**payload)
    except TypeError as exc:
        raise ConfigurationError(str(exc)) from None


@dataclass(frozen=True)
class LlmSettings:
    model: str = "llama3-8b"
    temperature: float = 0.2
    timeout: float = 120.0
    max_concurrency: int = 4


@dataclass(frozen=True)
class PipelineConfig:
    """Everything one run needs. File form (TOML or JSON)::

        seed = 7
        [paths]      logs, corpus, workdir
        [sampling]   SamplingConfig fields
        [train]      TrainConfig fields
        [model]      ModelConfig fields
        [retrieval]  k, lam
        [llm]        model, temperature, timeout, max_concurrency
    """

    logs: str | None = None
    corpus: str | None = None
    workdir: str = "work"
    seed: int = 0
    sampling: SamplingConfig = field(default_factory=SamplingConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    retrieval: RetrievalConfig = field(default_factory=RetrievalConfig)
    llm: LlmSettings = field(default_factory=LlmSettings)

    @classmethod
    def from_dict(cls, payload: Mapping) -> "PipelineConfig":
        payload = dict(payload)
        paths = dict(payload.pop("paths", {}) or {})
        allowed = {"seed", "sampling", "train", "model", "retrieval", "llm"}
        extra = set(payload) - allowed
        if extra or set(paths) - {"logs", "corpus", "workdir"}:
            raise ConfigurationError(f"unknown config keys: {sorted(extra | (set(paths) - {'logs', 'corpus', 'workdir'}))}")
        cfg = cls(
            logs=paths.get("logs"), corpus=paths.get("corpus"), workdir=paths.get("workdir", "work"),
            sampling=_section(SamplingConfig, payload.get("sampling")),
            train=_section(TrainConfig, payload.get("train")),
            model=_section(ModelConfig, payload.get("model")),
            retrieval=_section(RetrievalConfig, payload.get("retrieval")),
            llm=_section(LlmSettings, payload.get("llm")),
        )
        return cfg.with_seed(int(payload.get("seed", 0)))

    @classmethod
    def from_file(cls, path) -> "PipelineConfig":
        cfg = cls.from_dict(read_config_file(path))
        base = Path(path).resolve().parent
        resolve = lambda p: None if p is None else str((base / p).resolve())  # noqa: E731
        return replace(cfg, logs=resolve(cfg.logs), corpus=resolve(cfg.corpus), workdir=resolve(cfg.workdir))

    def with_seed(self, seed: int) -> "PipelineConfig":
        """One seed drives both the sampler and training."""
        return replace(self, seed=seed, sampling=replace(self.sampling, rng_seed=seed),
                       train=replace(self.train, seed=seed))

    def validate_paths(self) -> None:
        for name in ("logs", "corpus"):
            p = getattr(self, name)
            if p is not None and not Path(p).exists():
                raise ConfigurationError(f"{name} path does not exist: {p}")

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "paths": {"logs": self.logs, "corpus": self.corpus, "workdir": self.workdir},
            "sampling": asdict(self.sampling),
            "train": self.train.to_dict(),
            "model": self.model.to_dict(),
            "retrieval": asdict(self.retrieval),
            "llm": asdict(self.llm),
        }

    def digest(self) -> str:
        body = self.to_dict()
        body.pop("paths")
        return sha256_bytes(json.dumps(body, sort_keys=True).encode())


@dataclass
class StageRecord:
    output: str
    digest: str
    inputs: dict
    seed: int
    offline: bool
    extra: dict = field(default_factory=dict)


class Workdir:
    """Content-addressed artifact store with a JSON run manifest.

    Concurrent invocations on the same directory serialize on a lock file.
    """

    def __init__(self, root):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.lock = FileLock(str(self.root / LOCK_NAME))

    @property
    def manifest_path(self) -> Path:
        return self.root / MANIFEST_NAME

    def manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {"tool_version": __version__, "stages": {}}
        return json.loads(self.manifest_path.read_text(encoding="utf-8"))

    def artifact_path(self, stage: str, data: bytes, suffix: str) -> Path:
        return self.root / f"{stage}-{sha256_bytes(data)[:16]}{suffix}"

    def store(self, stage: str, data: bytes, suffix: str, out=None) -> Path:
        """Write bytes under their content address (or ``out``) and return the path."""
        path = Path(out) if out is not None else self.artifact_path(stage, data, suffix)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_bytes(data)
        tmp.replace(path)
        return path

    def record(self, stage: str, rec: StageRecord, config_digest: str | None = None) -> None:
        with self.lock:
            man = self.manifest()
            man["tool_version"] = __version__
            if config_digest is not None:
                man["config_digest"] = config_digest
            man["stages"][stage] = asdict(rec)
            text = json.dumps(man, indent=2, sort_keys=True) + "\n"
            tmp = self.manifest_path.with_name(MANIFEST_NAME + ".tmp")
            tmp.write_text(text, encoding="utf-8")
            tmp.replace(self.manifest_path)

    def latest(self, stage: str) -> str | None:
        rec = self.manifest()["stages"].get(stage)
        return rec["output"] if rec else None


# -- file formats --------------------------------------------------------

def load_report_texts(path) -> dict:
    """Report id -> text from JSONL.

    Accepts denoiser output (``id`` + ``denoised``), paired samples
    (``graph`` + ``report``; the id is the graph id) or plain ``id`` +
    ``body``/``text`` rows.
    """
    out = {}
    for lineno, row in enumerate(read_jsonl(path), start=1):
        if "denoised" in row and "id" in row:
            rid, text = row["id"], row["denoised"]
        elif "report" in row and "graph" in row:
            rid, text = Subgraph.from_dict(row["graph"]).graph_id, row["report"]
        elif "id" in row and ("body" in row or "text" in row):
            rid, text = row["id"], row.get("text", row.get("body"))
        else:
            raise ParseError("unrecognized report record", line=lineno)
        rid = str(rid)
        if rid in out:
            raise ParseError(f"duplicate report id {rid!r}", line=lineno)
        out[rid] = text
    if not out:
        raise InvalidInputError(f"no reports in {path}")
    return out


def load_truth(path) -> dict:
    """graph id -> paired report id (None for benign) from JSONL ``{graph_id, report_id}``."""
    out = {}
    for lineno, row in enumerate(read_jsonl(path), start=1):
        if "graph_id" not in row:
            raise ParseError("truth record needs graph_id", line=lineno)
        rid = row.get("report_id")
        out[str(row["graph_id"])] = None if rid is None else str(rid)
    return out


def load_alert_labels(path) -> dict:
    """alert graph id -> True for a real threat, from JSONL ``{graph_id, threat}``."""
    out = {}
    for lineno, row in enumerate(read_jsonl(path), start=1):
        if "graph_id" not in row or not isinstance(row.get("threat"), bool):
            raise ParseError("label record needs graph_id and boolean threat", line=lineno)
        out[str(row["graph_id"])] = row["threat"]
    return out


def decisions_jsonl(decisions: Iterable[MatchDecision]) -> str:
    return "".join(json.dumps(d.to_dict(), sort_keys=False) + "\n" for d in decisions)


def load_decisions(path) -> list[MatchDecision]:
    return [MatchDecision.from_dict(r) for r in read_jsonl(path)]


# -- alert validation ------------------------------------------------------

def validate_alerts(alerts: Sequence[Subgraph], model, index: VectorIndex, texts: Mapping[str, str],
                    labels: Mapping[str, bool], cfg: RetrievalConfig | None = None):
    """Run the hunter over alert subgraphs and score it as an alert filter.

    Returns the AFR/TRR metrics and one verdict dict per alert.
    """
    alerts = list(alerts)
    if not alerts:
        raise InvalidInputError("no alerts given")
    ids = [a.graph_id for a in alerts]
    if set(ids) != set(labels) or len(set(ids)) != len(ids):
        raise InvalidInputError("alert ids and labels do not correspond one to one")
    decisions = hunt_many(model, index, alerts, texts, cfg)
    by_id = {d.graph_id: d for d in decisions}
    metrics: AlertValidationMetrics = compute_afr_trr(ids, by_id, labels)
    verdicts = [{"graph_id": d.graph_id, "filtered": not d.matches, "threat": labels[d.graph_id],
                 "matches": [m.to_dict() for m in d.matches]} for d in decisions]
    return metrics, verdicts
