"""Soft voting, classification metrics and cross-validation aggregation."""

from volclf.evaluation.metrics import (
    METRIC_COLUMNS,
    ConfusionMatrix,
    CVSummary,
    MetricsReport,
    aggregate_cv,
    auc,
    balanced_accuracy,
    confusion,
    evaluate_predictions,
    metrics,
    round_half_up,
)
from volclf.evaluation.voting import UnitPrediction, VotingWeights, compute_weights, soft_vote, vote_subjects

__all__ = [
    "CVSummary",
    "ConfusionMatrix",
    "METRIC_COLUMNS",
    "MetricsReport",
    "UnitPrediction",
    "VotingWeights",
    "aggregate_cv",
    "auc",
    "balanced_accuracy",
    "compute_weights",
    "confusion",
    "evaluate_predictions",
    "metrics",
    "round_half_up",
    "soft_vote",
    "vote_subjects",
]
