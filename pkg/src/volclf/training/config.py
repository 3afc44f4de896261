"""Training hyperparameters and monitoring records."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

from volclf.errors import ConfigurationError

CURVE_COLUMNS = ("epoch", "train_loss", "train_ba", "valid_loss", "valid_ba")


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 50
    learning_rate: float = 1e-4
    batch_size: int = 12
    dropout: float = 0.5
    weight_decay: float = 0.0
    patience: int = 5
    eval_every_epochs: int = 1
    eval_every_iterations: int = 0  # > 0 switches to iteration cadence
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    bn_warmup_epochs: int = 1  # epochs a frozen BN layer keeps updating its running statistics

    def __post_init__(self):
        if self.epochs < 0:
            raise ConfigurationError("epochs must be non-negative")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.patience < 1:
            raise ConfigurationError("learning rate, batch size and patience must be positive")
        if not 0.0 <= self.dropout < 1.0 or self.weight_decay < 0:
            raise ConfigurationError("dropout must lie in [0, 1) and weight decay be non-negative")
        if self.epochs and self.patience > self.epochs:
            raise ConfigurationError(f"patience {self.patience} exceeds epochs {self.epochs}")
        if self.eval_every_epochs < 1 or self.eval_every_iterations < 0:
            raise ConfigurationError("evaluation cadence must be positive")

    def as_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_mapping(cls, values) -> TrainingConfig:
        kinds = {f.name: f.type for f in fields(cls)}
        out = {}
        for key, raw in values.items():
            if key not in kinds:
                raise ConfigurationError(f"unknown training option {key!r}")
            out[key] = int(raw) if kinds[key] in ("int", int) else float(raw)
        return cls(**out)


@dataclass(frozen=True)
class CurvePoint:
    epoch: int
    train_loss: float
    train_ba: float
    valid_loss: float
    valid_ba: float
    iteration: int | None = None


def write_curve(path: str | Path, curve: Sequence[CurvePoint]) -> None:
    lines = ["\t".join(CURVE_COLUMNS)]
    for p in curve:
        vals = [p.train_loss, p.train_ba, p.valid_loss, p.valid_ba]
        lines.append("\t".join([str(p.epoch)] + ["nan" if math.isnan(v) else f"{v:.6f}" for v in vals]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_curve(path: str | Path) -> list[CurvePoint]:
    rows = Path(path).read_text().splitlines()
    if not rows or tuple(rows[0].split("\t")) != CURVE_COLUMNS:
        raise ConfigurationError(f"{path}: not a curve file")
    out = []
    for r in rows[1:]:
        e, *vals = r.split("\t")
        out.append(CurvePoint(int(e), *(float(v) for v in vals)))
    return out
