"""Declarative layer graphs.

A :class:`ModelSpec` is an ordered list of :class:`LayerSpec` plus residual
shortcuts.  Each layer consumes the previous layer's output; a shortcut adds
the (optionally downsampled) output of ``source`` to the output of
``target`` and applies ReLU, the result replacing ``target``'s output.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Any, Iterator

LAYER_KINDS = {
    "conv",
    "deconv",
    "bn",
    "relu",
    "maxpool",
    "unpool",
    "avgpool",
    "dropout",
    "flatten",
    "linear",
    "softmax",
}


@dataclass(frozen=True)
class LayerSpec:
    name: str
    kind: str
    attrs: dict[str, Any] = field(default_factory=dict)
    row: str | None = None  # architecture-table row this layer belongs to

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")

    def get(self, key: str, default=None):
        return self.attrs.get(key, default)

    def as_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "attrs": dict(sorted(self.attrs.items())), "row": self.row}


@dataclass(frozen=True)
class Shortcut:
    source: str
    target: str
    downsample: tuple[LayerSpec, ...] = ()

    def as_dict(self) -> dict:
        return {"source": self.source, "target": self.target, "downsample": [l.as_dict() for l in self.downsample]}


@dataclass(frozen=True)
class ModelSpec:
    arch: str
    input_shape: tuple[int, ...]
    n_class: int
    layers: tuple[LayerSpec, ...]
    shortcuts: tuple[Shortcut, ...] = ()

    def as_dict(self) -> dict:
        return {
            "arch": self.arch,
            "input_shape": list(self.input_shape),
            "n_class": self.n_class,
            "layers": [l.as_dict() for l in self.layers],
            "shortcuts": [s.as_dict() for s in self.shortcuts],
        }

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @property
    def spatial_dims(self) -> int:
        return len(self.input_shape) - 1

    def layer(self, name: str) -> LayerSpec:
        for l in self.all_layers():
            if l.name == name:
                return l
        raise KeyError(name)

    def all_layers(self) -> Iterator[LayerSpec]:
        yield from self.layers
        for s in self.shortcuts:
            yield from s.downsample

    def shortcut_into(self, target: str) -> Shortcut | None:
        for s in self.shortcuts:
            if s.target == target:
                return s
        return None

    def conv_block_layers(self) -> tuple[LayerSpec, ...]:
        """Leading conv/bn/relu/maxpool layers, i.e. the feature extractor."""
        out = []
        for l in self.layers:
            if l.kind not in ("conv", "bn", "relu", "maxpool"):
                break
            out.append(l)
        return tuple(out)
