"""Patience-based early stopping and best-epoch selection."""

from __future__ import annotations

import math
from typing import Sequence


class EarlyStopping:
    """Stop once the last ``patience`` evaluations all had a validation loss
    strictly above the lowest loss seen before each of them.

    A loss equal to the running minimum is not "above" it, so it breaks the
    streak just like a new minimum does.
    """

    def __init__(self, patience: int):
        if patience < 1:
            raise ValueError("patience must be at least 1")
        self.patience = patience
        self.best = math.inf
        self.streak = 0

    def update(self, loss: float) -> bool:
        if loss > self.best:
            self.streak += 1
        else:
            self.streak = 0
        self.best = min(self.best, loss)
        return self.streak >= self.patience


def stopping_evaluation(losses: Sequence[float], patience: int) -> int | None:
    """1-based index of the evaluation after which training stops, or ``None``."""
    rule = EarlyStopping(patience)
    for i, loss in enumerate(losses, start=1):
        if rule.update(loss):
            return i
    return None


def best_index(scores: Sequence[float]) -> int:
    """Position of the highest score; the earliest wins ties, NaN never wins."""
    best, where = -math.inf, 0
    for i, s in enumerate(scores):
        if s > best:
            best, where = s, i
    return where
