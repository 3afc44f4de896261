"""Dense tensors, reverse-mode differentiation, layers and Adam."""

from volclf.tensor_engine.functional import (
    avgpool_nd,
    batchnorm,
    conv_nd,
    cross_entropy_loss,
    dropout,
    flatten,
    linear,
    log_softmax,
    max_unpool_nd,
    maxpool_nd,
    mse_loss,
    relu,
    softmax,
    transposed_conv_nd,
)
from volclf.tensor_engine.gradcheck import GradCheckResult, grad_check
from volclf.tensor_engine.optim import Adam, AdamState, adam_step
from volclf.tensor_engine.tensor import DiffRecord, Tensor, backward, no_grad

__all__ = [
    "Adam",
    "AdamState",
    "DiffRecord",
    "GradCheckResult",
    "Tensor",
    "adam_step",
    "avgpool_nd",
    "backward",
    "batchnorm",
    "conv_nd",
    "cross_entropy_loss",
    "dropout",
    "flatten",
    "grad_check",
    "linear",
    "log_softmax",
    "max_unpool_nd",
    "maxpool_nd",
    "mse_loss",
    "no_grad",
    "relu",
    "softmax",
    "transposed_conv_nd",
]
