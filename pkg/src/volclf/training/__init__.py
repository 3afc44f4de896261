"""Classifier and autoencoder training with patience early stopping."""

from volclf.training.config import CURVE_COLUMNS, CurvePoint, TrainingConfig, read_curve, write_curve
from volclf.training.loop import (
    EvalResult,
    TrainingOutcome,
    UnitSet,
    evaluate_model,
    finetune_from,
    pretrain_autoencoder,
    train_classifier,
    train_multi_cnn,
)
from volclf.training.stopping import EarlyStopping, best_index, stopping_evaluation

__all__ = [
    "CURVE_COLUMNS", "CurvePoint", "EarlyStopping", "EvalResult", "TrainingConfig", "TrainingOutcome", "UnitSet",
    "best_index", "evaluate_model", "finetune_from", "pretrain_autoencoder", "read_curve", "stopping_evaluation",
    "train_classifier", "train_multi_cnn", "write_curve",
]
