"""Reproducible evaluation of volumetric image classifiers.

Subpackages
-----------
tensor_engine
    Dense tensors with reverse-mode differentiation, layers and Adam.
model_zoo
    Declarative architectures, autoencoders, checkpoints, freezing, linear SVM.
data
    Manifests, diagnosis-label derivation, synthetic datasets, unit extraction.
splitting
    Subject-level splits, k-fold CV, leaky split and leakage auditors.
training
    Classifier/autoencoder training loops with early stopping.
evaluation
    Soft voting, metrics and cross-validation aggregation.
shape_oracle
    Symbolic shape inference for architecture conformance checks.
"""

__version__ = "0.1.0"
