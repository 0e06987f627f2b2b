"""Run configuration and per-epoch training report."""

import dataclasses
import json
from dataclasses import dataclass, field

from .errors import ConfigError

__all__ = ["TrainConfig", "EpochRecord", "TrainReport"]


@dataclass
class TrainConfig:
    """All hyperparameters of a pretraining run.

    A JSON config document mirrors these field names exactly; unknown keys
    are rejected. ``xi`` may be infinite (serialized as JSON ``Infinity``),
    which disables prototype spawning.
    """

    prop_steps: int = 10  # number of propagation scales L
    encoder_dim: int = 512
    proj_hidden: int = 2048
    proj_dim: int = 512
    negatives: int = 512  # M, clamped to the eligible pool on small graphs
    tau1: float = 1.0
    tau2: float = 1.0
    gamma: float = 0.5  # balance between structural and semantic losses
    xi: float = 0.25  # prototype spawn margin (squared distance, normalized space)
    lp_steps: int = 10
    lp_teleport: float = 0.15
    lr: float = 1e-3
    epochs: int = 300
    warmup_epochs: int = 50
    momentum: float = 0.99
    seed: int = 0
    normalize_projection: bool = True
    e_step_period: int = 1
    momentum_projector: bool = False
    early_stop: bool = False
    early_stop_rel_tol: float = 1e-5
    early_stop_window: int = 20

    def validate(self):
        if self.prop_steps < 1:
            raise ConfigError(f"prop_steps must be >= 1, got {self.prop_steps}")
        for name in ("encoder_dim", "proj_hidden", "proj_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.negatives < 1:
            raise ConfigError(f"negatives must be >= 1, got {self.negatives}")
        if self.tau1 <= 0 or self.tau2 <= 0:
            raise ConfigError(f"temperatures must be > 0, got {self.tau1}, {self.tau2}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not self.xi > 0:
            raise ConfigError(f"xi must be > 0, got {self.xi}")
        if self.lp_steps < 0:
            raise ConfigError(f"lp_steps must be >= 0, got {self.lp_steps}")
        if not 0.0 < self.lp_teleport <= 1.0:
            raise ConfigError(f"lp_teleport must lie in (0, 1], got {self.lp_teleport}")
        if self.lr <= 0:
            raise ConfigError(f"lr must be > 0, got {self.lr}")
        if not 0 <= self.warmup_epochs <= self.epochs:
            raise ConfigError(
                f"need epochs >= warmup_epochs >= 0, got {self.epochs}, {self.warmup_epochs}"
            )
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.e_step_period < 1:
            raise ConfigError(f"e_step_period must be >= 1, got {self.e_step_period}")
        if self.early_stop_window < 1:
            raise ConfigError(f"early_stop_window must be >= 1, got {self.early_stop_window}")
        return self

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config fields: {sorted(unknown)}")
        return cls(**data).validate()

    @classmethod
    def from_json_file(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON config: {exc}") from None
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        return cls.from_dict(data)


@dataclass
class EpochRecord:
    """One training epoch: loss components, prototype count, diagnostics."""

    epoch: int
    loss_str: float
    loss_sem: float
    loss_total: float
    gamma_eff: float  # 1.0 during warmup, configured gamma afterwards
    k: int  # inferred prototype count (0 before the first E-step)
    label_change: float
    e_step: bool
    fallback_anchors: int
    wall_time: float


@dataclass
class TrainReport:
    """Per-epoch records for a run; one record per completed epoch."""

    records: list[EpochRecord] = field(default_factory=list)

    @property
    def epochs_completed(self):
        return len(self.records)

    @property
    def e_step_count(self):
        return sum(r.e_step for r in self.records)

    def as_dict(self, include_timing=True):
        rows = []
        for r in self.records:
            row = dataclasses.asdict(r)
            if not include_timing:
                del row["wall_time"]
            rows.append(row)
        return {"epochs_completed": self.epochs_completed, "records": rows}

    def canonical_json(self):
        """Deterministic serialization: identical for identically seeded runs."""
        return json.dumps(self.as_dict(include_timing=False), sort_keys=True)

    def write_json(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.as_dict(), fh, indent=2)
            fh.write("\n")
