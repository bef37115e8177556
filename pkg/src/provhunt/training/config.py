"""Training hyperparameters and their file format (TOML or JSON key/value)."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from provhunt.errors import ConfigurationError


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 16
    alpha: float = 0.7
    lr: float = 2e-4
    weight_decay: float = 0.01
    epochs: int = 100
    warmup_epochs: int = 7
    min_lr: float = 1e-5
    mask_ratio: float = 0.15
    nodes_masked: int = 1
    tau_init: float = 0.07
    normalize: bool = True
    betas: tuple = (0.9, 0.999)
    adam_eps: float = 1e-8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ConfigurationError(f"alpha must lie strictly between 0 and 1, got {self.alpha}")
        if not 0.0 < self.mask_ratio < 1.0:
            raise ConfigurationError(f"mask_ratio must lie strictly between 0 and 1, got {self.mask_ratio}")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 1 or not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigurationError("need epochs >= 1 and 0 <= warmup_epochs <= epochs")
        if not 0.0 <= self.min_lr <= self.lr:
            raise ConfigurationError("need 0 <= min_lr <= lr")
        if self.weight_decay < 0:
            raise ConfigurationError("weight_decay must be >= 0")
        if self.nodes_masked != 1:
            raise ConfigurationError("exactly one node is masked per graph")
        if self.tau_init <= 0:
            raise ConfigurationError("tau_init must be positive")
        object.__setattr__(self, "betas", tuple(self.betas))

    def to_dict(self) -> dict:
        out = asdict(self)
        out["betas"] = list(self.betas)
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigurationError(f"unknown training keys: {sorted(unknown)}")
        return cls(**payload)

    @classmethod
    def from_file(cls, path) -> "TrainConfig":
        return cls.from_dict(read_config_file(path))


def read_config_file(path) -> dict:
    """Parse a ``.json`` file as JSON and anything else as TOML."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            return json.loads(text)
        return tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigurationError(f"malformed config {path}: {exc}") from exc
