"""Declarative model construction, materialization, checkpoints, freezing and the SVM baseline."""

from volclf.model_zoo.builders import (
    build_autoencoder_from,
    build_conv4_fc3,
    build_conv5_fc3,
    build_resnet18_slice,
)
from volclf.model_zoo.checkpoint import Checkpoint, load_checkpoint, save_checkpoint, transfer_encoder_weights
from volclf.model_zoo.freeze import FreezeMask, apply_freeze
from volclf.model_zoo.network import Network, init_parameters, parameter_shapes
from volclf.model_zoo.spec import LayerSpec, ModelSpec, Shortcut
from volclf.model_zoo.svm import SVMModel, svm_select_C, svm_train

__all__ = [
    "Checkpoint",
    "FreezeMask",
    "LayerSpec",
    "ModelSpec",
    "Network",
    "SVMModel",
    "Shortcut",
    "apply_freeze",
    "build_autoencoder_from",
    "build_conv4_fc3",
    "build_conv5_fc3",
    "build_resnet18_slice",
    "init_parameters",
    "load_checkpoint",
    "parameter_shapes",
    "save_checkpoint",
    "svm_select_C",
    "svm_train",
    "transfer_encoder_weights",
]
