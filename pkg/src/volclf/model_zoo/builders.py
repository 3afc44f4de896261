"""Constructors for the five classifiers and the mirrored autoencoder."""

from __future__ import annotations

from typing import Sequence

from volclf.errors import ConfigurationError, ShapeError
from volclf.model_zoo.spec import LayerSpec, ModelSpec, Shortcut
from volclf.shape_oracle import infer_shapes


def _conv_block(i: int, channels: int, padding: int, dims: int = 3) -> list[LayerSpec]:
    row = f"Conv{i}+BN+ReLU"
    return [
        LayerSpec(f"conv{i}", "conv", {"out_channels": channels, "kernel": 3, "stride": 1, "padding": padding, "dims": dims, "bias": True}, row),
        LayerSpec(f"bn{i}", "bn", {}, row),
        LayerSpec(f"relu{i}", "relu", {}, row),
        LayerSpec(f"maxpool{i}", "maxpool", {"window": 2, "stride": 2, "adaptive": True, "dims": dims}, f"MaxPool{i}"),
    ]


def _validated(spec: ModelSpec) -> ModelSpec:
    try:
        infer_shapes(spec)
    except ShapeError as exc:
        raise ConfigurationError(f"{spec.arch} cannot take input {spec.input_shape[1:]}: {exc}") from exc
    return spec


def build_conv5_fc3(input_dims: Sequence[int], n_class: int = 2, dropout: float = 0.5, fc1_width: int = 1300) -> ModelSpec:
    """3D subject-level CNN: five conv blocks (8..128 channels, padding 1) and three FC layers."""
    input_dims = tuple(int(d) for d in input_dims)
    if len(input_dims) != 3 or min(input_dims) < 32:
        raise ConfigurationError(f"Conv5FC3 needs three extents >= 32, got {input_dims}")
    layers: list[LayerSpec] = []
    for i, ch in enumerate((8, 16, 32, 64, 128), start=1):
        layers += _conv_block(i, ch, padding=1)
    layers += [
        LayerSpec("dropout", "dropout", {"rate": dropout}, "Dropout"),
        LayerSpec("flatten", "flatten", {}, None),
        LayerSpec("fc1", "linear", {"out_features": fc1_width}, "FC1"),
        LayerSpec("fc1_relu", "relu", {}, "FC1"),
        LayerSpec("fc2", "linear", {"out_features": 50}, "FC2"),
        LayerSpec("fc2_relu", "relu", {}, "FC2"),
        LayerSpec("fc3", "linear", {"out_features": n_class}, "FC3"),
        LayerSpec("softmax", "softmax", {}, "Softmax"),
    ]
    return _validated(ModelSpec("conv5_fc3", (1,) + input_dims, n_class, tuple(layers)))


def build_conv4_fc3(input_dims: Sequence[int], n_class: int = 2, dropout: float = 0.5, conv_padding: int = 0) -> ModelSpec:
    """3D ROI/patch-level CNN: four conv blocks (15, 25, 50, 50 channels) and three FC layers.

    ``conv_padding=0`` is the published architecture; desk-scale runs on
    small cubes use ``conv_padding=1`` so the fourth block does not collapse.
    """
    input_dims = tuple(int(d) for d in input_dims)
    if len(input_dims) != 3:
        raise ConfigurationError(f"Conv4FC3 needs three extents, got {input_dims}")
    layers: list[LayerSpec] = []
    for i, ch in enumerate((15, 25, 50, 50), start=1):
        layers += _conv_block(i, ch, padding=conv_padding)
    layers += [
        LayerSpec("dropout1", "dropout", {"rate": dropout}, "Dropout1"),
        LayerSpec("flatten", "flatten", {}, None),
        LayerSpec("fc1", "linear", {"out_features": 50}, "FC1"),
        LayerSpec("fc1_relu", "relu", {}, "FC1"),
        LayerSpec("dropout2", "dropout", {"rate": dropout}, "Dropout2"),
        LayerSpec("fc2", "linear", {"out_features": 40}, "FC2"),
        LayerSpec("fc2_relu", "relu", {}, "FC2"),
        LayerSpec("fc3", "linear", {"out_features": n_class}, "FC3"),
        LayerSpec("softmax", "softmax", {}, "Softmax"),
    ]
    return _validated(ModelSpec("conv4_fc3", (1,) + input_dims, n_class, tuple(layers)))


def build_resnet18_slice(n_class: int = 2, input_size: int = 224, width: int = 64, dropout: float = 0.8) -> ModelSpec:
    """2D slice-level ResNet-18 with an added FC layer on top.

    Layers are named after the architecture table (``conv1`` .. ``conv20``);
    ``conv8``, ``conv13`` and ``conv18`` are the 1x1 stride-2 downsampling
    shortcuts.  ``input_size``/``width`` shrink the network for desk-scale
    training; the defaults give the published 3x224x224 model.
    """
    if input_size < 32:
        raise ConfigurationError(f"slice input must be at least 32x32, got {input_size}")
    w = (width, 2 * width, 4 * width, 8 * width)

    def conv(i, ch, k, s, p, relu):
        row = f"Conv{i}+BN" + ("+ReLU" if relu else "")
        out = [
            LayerSpec(f"conv{i}", "conv", {"out_channels": ch, "kernel": k, "stride": s, "padding": p, "dims": 2, "bias": False}, row),
            LayerSpec(f"bn{i}", "bn", {}, row),
        ]
        if relu:
            out.append(LayerSpec(f"relu{i}", "relu", {}, row))
        return out

    def downsample(i, ch):
        return (
            LayerSpec(f"conv{i}", "conv", {"out_channels": ch, "kernel": 1, "stride": 2, "padding": 0, "dims": 2, "bias": False}, None),
            LayerSpec(f"bn{i}", "bn", {}, None),
        )

    layers = conv(1, w[0], 7, 2, 3, True)
    layers.append(LayerSpec("maxpool1", "maxpool", {"window": 3, "stride": 2, "padding": 1, "adaptive": False, "dims": 2}, "MaxPool1"))
    shortcuts = []
    # (first conv index, channels, stride of first conv, downsample conv index, previous output)
    stages = [(2, w[0], 1, None), (6, w[1], 2, 8), (11, w[2], 2, 13), (16, w[3], 2, 18)]
    prev = "maxpool1"
    for first, ch, stride, ds in stages:
        a, b = first, first + 1
        layers += conv(a, ch, 3, stride, 1, True) + conv(b, ch, 3, 1, 1, False)
        shortcuts.append(Shortcut(prev, f"bn{b}", downsample(ds, ch) if ds else ()))
        c = b + 2 if ds else b + 1
        d = c + 1
        layers += conv(c, ch, 3, 1, 1, True) + conv(d, ch, 3, 1, 1, False)
        shortcuts.append(Shortcut(f"bn{b}", f"bn{d}"))
        prev = f"bn{d}"
    final = input_size
    for _ in range(5):
        final = (final + 1) // 2  # conv1, maxpool1 and three stride-2 stages
    layers += [
        LayerSpec("avgpool1", "avgpool", {"window": final, "stride": 1, "dims": 2}, "AveragePool1"),
        LayerSpec("flatten", "flatten", {}, None),
        LayerSpec("fc1", "linear", {"out_features": 1000}, "FC1"),
        LayerSpec("dropout", "dropout", {"rate": dropout}, "Dropout"),
        LayerSpec("fc2", "linear", {"out_features": n_class}, "FC2"),
        LayerSpec("softmax", "softmax", {}, "Softmax"),
    ]
    spec = ModelSpec("resnet18_slice", (3, input_size, input_size), n_class, tuple(layers), tuple(shortcuts))
    return _validated(spec)


def build_autoencoder_from(classifier: ModelSpec) -> ModelSpec:
    """Autoencoder whose encoder is the classifier's conv blocks.

    The decoder mirrors the encoder block by block: unpool (with the paired
    encoder pool's indices), transposed conv, then BN and ReLU; the final
    block stops after the transposed conv so reconstructions are unconstrained.
    """
    if classifier.arch not in ("conv5_fc3", "conv4_fc3"):
        raise ConfigurationError(f"autoencoders are built only from 3D conv-block models, not {classifier.arch}")
    encoder = classifier.conv_block_layers()
    trace = infer_shapes(ModelSpec(classifier.arch, classifier.input_shape, classifier.n_class, encoder))
    prev = "input"
    blocks = []
    for layer in encoder:
        if layer.kind == "conv":
            c_in = classifier.input_shape[0] if prev == "input" else trace[prev][0]
            blocks.append({"conv": layer, "in_channels": c_in})
        elif layer.kind == "maxpool":
            blocks[-1]["pool"] = layer
        prev = layer.name
    decoder: list[LayerSpec] = []
    for j, block in enumerate(reversed(blocks)):
        i = len(blocks) - j
        conv = block["conv"]
        decoder.append(LayerSpec(f"unpool{i}", "unpool", {"pool": block["pool"].name}, None))
        decoder.append(
            LayerSpec(
                f"deconv{i}",
                "deconv",
                {
                    "out_channels": block["in_channels"],
                    "kernel": conv.get("kernel"),
                    "stride": conv.get("stride", 1),
                    "padding": conv.get("padding", 0),
                    "dims": conv.get("dims", 3),
                    "bias": True,
                },
                None,
            )
        )
        if i > 1:
            decoder.append(LayerSpec(f"dbn{i}", "bn", {}, None))
            decoder.append(LayerSpec(f"drelu{i}", "relu", {}, None))
    return ModelSpec(f"autoencoder_{classifier.arch}", classifier.input_shape, classifier.n_class, encoder + tuple(decoder))
