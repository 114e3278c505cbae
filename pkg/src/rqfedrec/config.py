"""Experiment configuration: defaults, validation, JSON round-trip."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, fields
from pathlib import Path

logger = logging.getLogger(__name__)

METHODS = ("rqfedrec", "fedmf", "local")


class ConfigError(ValueError):
    def __init__(self, field_name: str, message: str):
        super().__init__(f"{field_name}: {message}")
        self.field = field_name


@dataclass
class ExperimentConfig:
    dataset_path: str = ""
    dataset_format: str = "tsv_triples"
    semantic: str = "synthetic"
    d_sem: int = 64
    n_clients: int = 100
    d: int = 512
    M: int = 256
    L: int = 3
    tau: int = 10
    T_warm: int = 100
    rounds: int = 200
    local_epochs: int = 1
    neg_ratio: int = 4
    batch_size: int = 256
    lr: float = 1e-3
    codebook_lr: float = 1e-2
    codebook_steps: int = 100
    weight_decay: float = 1e-6
    delta: float = 0.0
    noise_ratio: float = 0.0
    kmeans_iters: int = 50
    eval_every: int = 1
    top_k: int = 10
    method: str = "rqfedrec"
    seed: int = 0
    output_dir: str = "runs/default"

    def validate(self) -> "ExperimentConfig":
        if not self.dataset_path:
            raise ConfigError("dataset_path", "is required")
        if self.dataset_format != "tsv_triples":
            raise ConfigError("dataset_format", f"unsupported format {self.dataset_format!r}")
        if self.method not in METHODS:
            raise ConfigError("method", f"must be one of {', '.join(METHODS)}")
        for name in ("n_clients", "d", "M", "L", "tau", "T_warm", "rounds", "local_epochs",
                     "neg_ratio", "batch_size", "codebook_steps", "kmeans_iters", "eval_every",
                     "top_k", "d_sem"):
            if getattr(self, name) < 1:
                raise ConfigError(name, "must be a positive integer")
        for name in ("lr", "codebook_lr"):
            if not getattr(self, name) > 0:
                raise ConfigError(name, "must be positive")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay", "must be >= 0")
        if self.delta < 0:
            raise ConfigError("delta", "must be >= 0")
        if not 0.0 <= self.noise_ratio <= 1.0:
            raise ConfigError("noise_ratio", "must lie in [0, 1]")
        return self

    def warn_if_inefficient(self, n_items: int) -> bool:
        """Warn when codebooks are no smaller than the item table they replace."""
        if self.method == "rqfedrec" and self.L * self.M * self.d >= n_items * self.d:
            logger.warning("L*M*d = %d is not below n_items*d = %d; codebooks save no communication",
                           self.L * self.M * self.d, n_items * self.d)
            return True
        return False

    def to_dict(self) -> dict:
        return asdict(self)

    def render(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            name = sorted(unknown)[0]
            raise ConfigError(name, "unknown field")
        values = {}
        for name, value in data.items():
            values[name] = _coerce(name, known[name].type, value)
        return cls(**values)

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError("<file>", f"invalid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError("<file>", "top level must be an object")
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        return cls.parse(Path(path).read_text())

    def with_overrides(self, **overrides) -> "ExperimentConfig":
        data = self.to_dict()
        data.update({k: v for k, v in overrides.items() if v is not None})
        return type(self).from_dict(data)


def _coerce(name: str, type_name: str, value):
    try:
        if type_name == "int":
            if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
                raise ValueError
            return int(value)
        if type_name == "float":
            return float(value)
        return str(value)
    except (TypeError, ValueError):
        raise ConfigError(name, f"expected {type_name}, got {value!r}") from None
