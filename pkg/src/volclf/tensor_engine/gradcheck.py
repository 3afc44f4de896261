"""Finite-difference verification of backward passes."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from volclf.tensor_engine.tensor import Tensor, backward, no_grad


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_input: int
    worst_index: tuple[int, ...]
    n_checked: int

    def __float__(self) -> float:
        return self.max_rel_error


def relative_error(analytic: float, numeric: float, floor: float = 1e-6) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def grad_check(
    function: Callable[..., Tensor],
    point: Sequence[np.ndarray],
    perturbation: float | Sequence[float] = 1e-5,
    max_coords: int | None = None,
    seed: int = 0,
    floor: float = 1e-6,
) -> GradCheckResult:
    """Compare backward gradients with central differences.

    ``function`` maps tensors built from ``point`` (float64 recommended) to a
    scalar tensor and must be deterministic across calls.  ``max_coords``
    samples that many coordinates per input instead of checking all of them.
    Relative error uses ``max(|a|, |n|, floor)`` as denominator.

    A sequence of ``perturbation`` steps scores each coordinate by its best
    agreement over the steps: large steps straddle ReLU/max kinks, small ones
    drown in rounding, and a wrong gradient disagrees at every step.
    """
    steps = (perturbation,) if np.isscalar(perturbation) else tuple(perturbation)
    arrays = [np.array(a, dtype=np.float64 if a.dtype != np.float32 else a.dtype, copy=True) for a in point]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    loss = function(*tensors)
    backward(loss)
    rng = np.random.default_rng(seed)

    worst = GradCheckResult(0.0, -1, (), 0)
    for i, arr in enumerate(arrays):
        analytic = tensors[i].grad if tensors[i].grad is not None else np.zeros_like(arr)
        coords = list(np.ndindex(arr.shape))
        if max_coords is not None and len(coords) > max_coords:
            picks = rng.choice(len(coords), size=max_coords, replace=False)
            coords = [coords[j] for j in sorted(picks)]
        for idx in coords:
            err = min(
                relative_error(float(analytic[idx]), _central_difference(function, arrays, i, idx, h), floor)
                for h in steps
            )
            worst.n_checked += 1
            if err > worst.max_rel_error or worst.worst_input < 0:
                worst.max_rel_error = err
                worst.worst_input = i
                worst.worst_index = idx
    return worst


def _central_difference(function, arrays, i, idx, h) -> float:
    original = arrays[i][idx]
    with no_grad():
        arrays[i][idx] = original + h
        plus = function(*[Tensor(a.copy()) for a in arrays]).item()
        arrays[i][idx] = original - h
        minus = function(*[Tensor(a.copy()) for a in arrays]).item()
    arrays[i][idx] = original
    return (plus - minus) / (2 * h)
