"""Symbolic shape inference over a :class:`~volclf.model_zoo.spec.ModelSpec`.

Replays the conv/pool/FC shape algebra without allocating tensors, so the
full-size (169x208x179) architectures can be checked in milliseconds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from typing import TYPE_CHECKING, Sequence

from volclf.errors import ShapeError

if TYPE_CHECKING:  # model_zoo imports this module at load time
    from volclf.model_zoo.spec import LayerSpec, ModelSpec


@dataclass
class ShapeTrace:
    entries: list[tuple[str, tuple[int, ...]]] = field(default_factory=list)
    rows: dict[str, tuple[int, ...]] = field(default_factory=dict)

    def __getitem__(self, name: str) -> tuple[int, ...]:
        for n, shape in self.entries:
            if n == name:
                return shape
        raise KeyError(name)

    def final(self) -> tuple[int, ...]:
        return self.entries[-1][1]


def _conv_extent(size, k, s, p):
    return (size + 2 * p - k) // s + 1


def layer_output(layer: LayerSpec, shape: tuple[int, ...], pool_inputs: dict[str, tuple[int, ...]]) -> tuple[int, ...]:
    """Output shape (channels first, no batch axis) of ``layer`` on ``shape``."""
    kind = layer.kind
    if kind == "conv":
        k, s, p = layer.get("kernel"), layer.get("stride", 1), layer.get("padding", 0)
        spatial = tuple(_conv_extent(e, k, s, p) for e in shape[1:])
        return (layer.get("out_channels"),) + spatial
    if kind == "deconv":
        k, s, p = layer.get("kernel"), layer.get("stride", 1), layer.get("padding", 0)
        spatial = tuple((e - 1) * s - 2 * p + k for e in shape[1:])
        return (layer.get("out_channels"),) + spatial
    if kind == "maxpool":
        w, s = layer.get("window"), layer.get("stride", layer.get("window"))
        if layer.get("adaptive", False):
            spatial = tuple((e + (-e) % s - w) // s + 1 for e in shape[1:])
        else:
            p = layer.get("padding", 0)
            spatial = tuple(_conv_extent(e, w, s, p) for e in shape[1:])
        return (shape[0],) + spatial
    if kind == "unpool":
        return (shape[0],) + pool_inputs[layer.get("pool")][1:]
    if kind == "avgpool":
        w, s = layer.get("window"), layer.get("stride", 1)
        return (shape[0],) + tuple(_conv_extent(e, w, s, 0) for e in shape[1:])
    if kind == "flatten":
        return (math.prod(shape),)
    if kind == "linear":
        return (layer.get("out_features"),)
    return shape  # bn, relu, dropout, softmax


def _check(layer: LayerSpec, shape: tuple[int, ...]) -> None:
    if any(e < 1 for e in shape):
        raise ShapeError(f"layer {layer.name} collapses the input to extent {shape}", layer=layer.name)


def infer_shapes(spec: ModelSpec, input_extents: Sequence[int] | None = None) -> ShapeTrace:
    """Trace every layer's output shape for ``input_extents`` (spatial only)."""
    shape = tuple(spec.input_shape)
    if input_extents is not None:
        shape = (shape[0],) + tuple(int(e) for e in input_extents)
    if len(shape) != len(spec.input_shape):
        raise ShapeError(f"expected {len(spec.input_shape) - 1} spatial extents, got {input_extents}")
    trace = ShapeTrace()
    outputs: dict[str, tuple[int, ...]] = {"input": shape}
    pool_inputs: dict[str, tuple[int, ...]] = {}
    for layer in spec.layers:
        if layer.kind == "maxpool":
            pool_inputs[layer.name] = shape
        shape = layer_output(layer, shape, pool_inputs)
        _check(layer, shape)
        sc = spec.shortcut_into(layer.name)
        if sc is not None:
            src = outputs[sc.source]
            for ds in sc.downsample:
                src = layer_output(ds, src, pool_inputs)
                _check(ds, src)
                trace.entries.append((ds.name, src))
            if src != shape:
                raise ShapeError(
                    f"shortcut {sc.source}->{sc.target} joins {src} with {shape}", layer=layer.name
                )
        outputs[layer.name] = shape
        trace.entries.append((layer.name, shape))
        if layer.row is not None:
            trace.rows[layer.row] = shape
    return trace


def format_extents(shape: tuple[int, ...]) -> str:
    return "x".join(str(e) for e in shape)


def load_golden(name: str) -> list[tuple[str, str]]:
    """Rows ``(table row, output size)`` transcribed from the architecture tables."""
    text = resources.files("volclf.shape_oracle").joinpath("golden", f"{name}.tsv").read_text()
    rows = []
    for line in text.splitlines():
        if not line.strip() or line.startswith("#") or line.startswith("row\t"):
            continue
        row, size = line.split("\t")
        rows.append((row, size))
    return rows


def diff_against_golden(trace: ShapeTrace, golden: list[tuple[str, str]]) -> list[str]:
    """Human-readable mismatches; rows reported as ``--`` carry no size and are skipped."""
    diffs = []
    for row, expected in golden:
        if expected == "--":
            continue
        if row not in trace.rows:
            diffs.append(f"{row}: missing from trace (expected {expected})")
            continue
        got = format_extents(trace.rows[row])
        if got != expected:
            diffs.append(f"{row}: expected {expected}, got {got}")
    return diffs


def golden_architectures() -> dict[str, ModelSpec]:
    """Architecture and input size behind each golden table."""
    from volclf.model_zoo.builders import build_conv4_fc3, build_conv5_fc3, build_resnet18_slice

    return {
        "etable1_minimal": build_conv5_fc3((169, 208, 179)),
        "etable1_extensive": build_conv5_fc3((121, 145, 121)),
        "etable2": build_conv4_fc3((50, 50, 50)),
        "etable3": build_resnet18_slice(2, 224, 64),
    }
