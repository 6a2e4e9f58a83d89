"""Training hyperparameters and their versioned JSON form."""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from ..errors import ConfigInvalid

SCHEMA_VERSION = 1
LEARNING_RATE_GRID = (1e-4, 5e-5, 1e-5)
HIDDEN_GRID = (16, 32, 64, 128)
LAYER_GRID = (1, 2, 3, 4, 5)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    hidden_dim: int = 64
    layers: int = 2
    channels: int = 4
    residual_alpha: float = 0.1
    lam: float = 1e-5
    batch_size: int = 512
    pretrain_epochs: int = 20
    pretrain_patience: int = 5
    max_epochs: int = 150
    patience: int = 20
    seed: int = 0
    split_ratios: tuple = (0.6, 0.2, 0.2)
    split_seed: int | None = None  # None -> seed
    gcn_step: bool = False
    threshold: float = 0.5
    baseline_mode: str = "full"  # "full" KG triples or "status" (r_s only)
    baseline_epochs: int = 100
    margin: float = 1.0
    extra: dict = field(default_factory=dict, compare=False, repr=False)

    def violations(self) -> list[str]:
        out = []
        positive = ("learning_rate", "hidden_dim", "layers", "channels", "batch_size",
                    "pretrain_epochs", "max_epochs", "baseline_epochs", "margin")
        for name in positive:
            if not getattr(self, name) > 0:
                out.append(f"{name} must be positive (got {getattr(self, name)})")
        for name in ("lam", "patience", "pretrain_patience"):
            if getattr(self, name) < 0:
                out.append(f"{name} must be non-negative (got {getattr(self, name)})")
        if self.hidden_dim > 0 and self.channels > 0 and self.hidden_dim % self.channels:
            out.append(f"channels ({self.channels}) must divide hidden_dim ({self.hidden_dim})")
        if not 0.0 <= self.residual_alpha <= 1.0:
            out.append(f"residual_alpha must lie in [0, 1] (got {self.residual_alpha})")
        r = tuple(self.split_ratios)
        if len(r) != 3 or any(x <= 0 for x in r) or abs(sum(r) - 1.0) > 1e-9:
            out.append(f"split_ratios must be three positive numbers summing to 1 (got {r})")
        if not 0.0 < self.threshold < 1.0:
            out.append(f"threshold must lie in (0, 1) (got {self.threshold})")
        if self.baseline_mode not in ("full", "status"):
            out.append(f"baseline_mode must be 'full' or 'status' (got {self.baseline_mode!r})")
        if self.seed < 0:
            out.append("seed must be non-negative")
        return out

    def validate(self) -> "TrainConfig":
        problems = self.violations()
        if problems:
            raise ConfigInvalid(problems)
        return self

    @property
    def effective_split_seed(self) -> int:
        return self.seed if self.split_seed is None else self.split_seed

    def replace(self, **changes) -> "TrainConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION}
        for f in dataclasses.fields(self):
            if f.name == "extra":
                continue
            value = getattr(self, f.name)
            out[f.name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        data = dict(data)
        problems = []
        version = data.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            problems.append(f"schema_version must be {SCHEMA_VERSION} (got {version!r})")
        known = {f.name for f in dataclasses.fields(cls)} - {"extra"}
        for key in sorted(set(data) - known):
            problems.append(f"unknown config key {key!r}")
        if problems:
            raise ConfigInvalid(problems)
        if "split_ratios" in data:
            data["split_ratios"] = tuple(data["split_ratios"])
        return cls(**data).validate()

    @classmethod
    def load(cls, path) -> "TrainConfig":
        with open(path, encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigInvalid(f"{path}: not valid JSON ({exc})") from None
        if not isinstance(data, dict):
            raise ConfigInvalid(f"{path}: top level must be an object")
        return cls.from_dict(data)
