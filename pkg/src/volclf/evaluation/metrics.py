"""Confusion-matrix metrics, rank AUC and cross-validation summaries."""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from volclf.errors import DataError

METRIC_COLUMNS = (
    "task", "fold", "ba", "accuracy", "sensitivity", "specificity", "auc", "n_pos", "n_neg", "imbalance_flag",
)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int
    positive: int = 1


def _binary(values, name) -> np.ndarray:
    arr = np.asarray(values).reshape(-1)
    if arr.size == 0:
        raise DataError(f"{name} is empty")
    return arr


def confusion(true_labels, predicted_labels, positive: int = 1) -> ConfusionMatrix:
    t = _binary(true_labels, "true labels")
    p = _binary(predicted_labels, "predictions")
    if t.shape != p.shape:
        raise DataError(f"{t.size} labels but {p.size} predictions")
    if len(np.union1d(np.unique(t), np.unique(p))) > 2:
        raise DataError("confusion matrices here are binary")
    pos_t, pos_p = t == positive, p == positive
    return ConfusionMatrix(
        int((pos_t & pos_p).sum()), int((~pos_t & pos_p).sum()), int((~pos_t & ~pos_p).sum()), int((pos_t & ~pos_p).sum()), positive
    )


def _ratio(num: int, den: int) -> float:
    return num / den if den else math.nan


@dataclass(frozen=True)
class MetricsReport:
    """Rates are NaN when their denominator class is absent."""

    confusion: ConfusionMatrix
    ba: float
    accuracy: float
    sensitivity: float
    specificity: float
    auc: float
    n_pos: int
    n_neg: int
    imbalanced: bool

    def row(self, task: str, fold) -> list[str]:
        vals = [self.ba, self.accuracy, self.sensitivity, self.specificity, self.auc]
        return [task, str(fold)] + [f"{v:.4f}" for v in vals] + [str(self.n_pos), str(self.n_neg), str(int(self.imbalanced))]


def metrics(cm: ConfusionMatrix, scores=None, true_labels=None) -> MetricsReport:
    """Derived rates; AUC is computed when positive-class ``scores`` are given."""
    n_pos, n_neg = cm.tp + cm.fn, cm.tn + cm.fp
    if n_pos + n_neg == 0:
        raise DataError("empty confusion matrix")
    sens, spec = _ratio(cm.tp, n_pos), _ratio(cm.tn, n_neg)
    ba = (sens + spec) / 2
    acc = (cm.tp + cm.tn) / (n_pos + n_neg)
    area = math.nan
    if scores is not None and n_pos and n_neg:
        area = auc(scores, np.asarray(true_labels) == cm.positive)
    imbalanced = min(n_pos, n_neg) < 0.5 * max(n_pos, n_neg)
    return MetricsReport(cm, ba, acc, sens, spec, area, n_pos, n_neg, imbalanced)


def evaluate_predictions(true_labels, predicted_labels, scores=None, positive: int = 1) -> MetricsReport:
    return metrics(confusion(true_labels, predicted_labels, positive), scores, true_labels)


def balanced_accuracy(true_labels, predicted_labels, positive: int = 1) -> float:
    return evaluate_predictions(true_labels, predicted_labels, positive=positive).ba


def auc(scores, true_labels) -> float:
    """Mann-Whitney estimate: P(score_pos > score_neg) + 0.5 P(tie)."""
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    y = np.asarray(true_labels).reshape(-1).astype(bool)
    if s.shape != y.shape:
        raise DataError("scores and labels differ in length")
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("AUC needs both classes")
    ranks = rankdata(s)  # average ranks count ties as one half
    return float((ranks[y].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def round_half_up(value: float, digits: int = 2) -> str:
    q = Decimal(1).scaleb(-digits)
    return str(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


@dataclass(frozen=True)
class CVSummary:
    values: tuple[float, ...]
    mean: float
    sd: float
    sd_defined: bool

    def format(self, digits: int = 2) -> str:
        folds = ", ".join(round_half_up(v, digits) for v in self.values)
        return f"{round_half_up(self.mean, digits)} ± {round_half_up(self.sd, digits)} [{folds}]"


def aggregate_cv(per_fold: Sequence) -> CVSummary:
    """Mean and sample standard deviation of per-fold BAs (reports or plain numbers).

    A single fold has no sample deviation; it is reported as 0 with
    ``sd_defined`` False.
    """
    values = tuple(float(getattr(v, "ba", v)) for v in per_fold)
    if not values:
        raise DataError("no folds to aggregate")
    mean = float(np.mean(values))
    if len(values) == 1:
        return CVSummary(values, mean, 0.0, False)
    return CVSummary(values, mean, float(np.std(values, ddof=1)), True)
