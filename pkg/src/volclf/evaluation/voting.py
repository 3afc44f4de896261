"""Accuracy-weighted soft voting across units of one subject."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Hashable, Mapping, Sequence

import numpy as np

from volclf.errors import ConfigurationError, DataError

DEFAULT_THRESHOLD = 0.7


@dataclass(frozen=True)
class UnitPrediction:
    subject: str
    session: str
    unit: Hashable
    probabilities: tuple[float, ...]
    label: int

    def __post_init__(self):
        p = np.asarray(self.probabilities, dtype=np.float64)
        if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
            raise DataError(f"unit {self.unit} of {self.subject}: probabilities {self.probabilities} do not form a distribution")


@dataclass(frozen=True)
class VotingWeights:
    weights: dict
    source_ba: dict
    threshold: float | None
    fallback: bool = False  # every unit fell below the threshold

    def __getitem__(self, unit):
        return self.weights[unit]

    def __contains__(self, unit) -> bool:
        return unit in self.weights


def compute_weights(unit_ba: Mapping[Hashable, float] | Sequence[float], threshold: float | None = None) -> VotingWeights:
    """Weights proportional to per-unit validation BA.

    With a threshold, units below it get weight 0 before normalization; if no
    unit survives, the unthresholded weights are used and a warning is issued.
    """
    if not isinstance(unit_ba, Mapping):
        unit_ba = dict(enumerate(unit_ba))
    if not unit_ba:
        raise ConfigurationError("no units to weight")
    units = list(unit_ba)
    ba = np.array([float(unit_ba[u]) for u in units])
    if ((ba < 0) | (ba > 1) | ~np.isfinite(ba)).any():
        raise ConfigurationError(f"balanced accuracies must lie in [0, 1], got {ba.tolist()}")
    kept = ba.copy()
    fallback = False
    if threshold is not None:
        kept = np.where(ba >= threshold, ba, 0.0)
        if kept.sum() == 0:
            warnings.warn(f"every unit is below the voting threshold {threshold}; using unthresholded weights", RuntimeWarning, stacklevel=2)
            kept, fallback = ba.copy(), True
    total = kept.sum()
    if total == 0:
        w = np.full(len(units), 1.0 / len(units))  # all BAs zero: equal say
    else:
        w = kept / total
    return VotingWeights(dict(zip(units, w.tolist())), dict(zip(units, ba.tolist())), threshold, fallback)


def soft_vote(unit_probabilities: Mapping[Hashable, Sequence[float]], weights) -> tuple[int, np.ndarray]:
    """Return ``(argmax_i sum_j w_j p_ij, fused vector)``; ties go to the lower class index."""
    if not unit_probabilities:
        raise DataError("nothing to vote on")
    fused = None
    for unit, p in unit_probabilities.items():
        if unit not in weights:
            raise ConfigurationError(f"no voting weight for unit {unit!r}")
        term = float(weights[unit]) * np.asarray(p, dtype=np.float64)
        fused = term if fused is None else fused + term
    return int(np.argmax(fused)), fused


def vote_subjects(predictions: Sequence[UnitPrediction], weights) -> dict[tuple[str, str], tuple[int, np.ndarray, int]]:
    """Fuse unit predictions per (subject, session): ``{key: (voted, fused, true label)}``."""
    grouped: dict[tuple[str, str], dict] = {}
    labels: dict[tuple[str, str], int] = {}
    for p in predictions:
        key = (p.subject, p.session)
        grouped.setdefault(key, {})[p.unit] = p.probabilities
        if labels.setdefault(key, p.label) != p.label:
            raise DataError(f"{key}: units disagree on the true label")
    out = {}
    for key in sorted(grouped):
        y, fused = soft_vote(grouped[key], weights)
        out[key] = (y, fused, labels[key])
    return out
