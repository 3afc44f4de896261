"""Materialize a :class:`ModelSpec` into parameters and a forward pass."""

from __future__ import annotations

import math
from typing import Iterable

import numpy as np

from volclf.errors import ConfigurationError
from volclf.model_zoo.spec import LayerSpec, ModelSpec
from volclf.shape_oracle import infer_shapes
from volclf.tensor_engine import functional as F
from volclf.tensor_engine.tensor import Tensor

BN_EPS = 1e-5
BN_MOMENTUM = 0.1


def parameter_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    """Names and shapes of every learnable parameter, in initialization order."""
    shapes: dict[str, tuple[int, ...]] = {}
    trace = infer_shapes(spec)
    in_shape = {}
    prev = tuple(spec.input_shape)
    for layer in spec.layers:
        in_shape[layer.name] = prev
        prev = trace[layer.name]
    for sc in spec.shortcuts:
        src = tuple(spec.input_shape) if sc.source == "input" else trace[sc.source]
        for ds in sc.downsample:
            in_shape[ds.name] = src
            src = trace[ds.name]
    ordered = list(spec.layers) + [ds for sc in spec.shortcuts for ds in sc.downsample]
    for layer in ordered:
        shp = in_shape[layer.name]
        if layer.kind == "conv":
            k = layer.get("kernel")
            dims = layer.get("dims", 3)
            shapes[f"{layer.name}.weight"] = (layer.get("out_channels"), shp[0]) + (k,) * dims
            if layer.get("bias", True):
                shapes[f"{layer.name}.bias"] = (layer.get("out_channels"),)
        elif layer.kind == "deconv":
            k = layer.get("kernel")
            dims = layer.get("dims", 3)
            shapes[f"{layer.name}.weight"] = (shp[0], layer.get("out_channels")) + (k,) * dims
            shapes[f"{layer.name}.bias"] = (layer.get("out_channels"),)
        elif layer.kind == "bn":
            shapes[f"{layer.name}.weight"] = (shp[0],)
            shapes[f"{layer.name}.bias"] = (shp[0],)
        elif layer.kind == "linear":
            shapes[f"{layer.name}.weight"] = (layer.get("out_features"), shp[0])
            shapes[f"{layer.name}.bias"] = (layer.get("out_features"),)
    return shapes


def buffer_shapes(spec: ModelSpec) -> dict[str, tuple[int, ...]]:
    out = {}
    for name, shape in parameter_shapes(spec).items():
        layer, kind = name.rsplit(".", 1)
        if spec.layer(layer).kind == "bn" and kind == "weight":
            out[f"{layer}.running_mean"] = shape
            out[f"{layer}.running_var"] = shape
    return out


def init_parameters(spec: ModelSpec, seed: int, dtype=np.float32) -> dict[str, np.ndarray]:
    """Fan-in scaled uniform (He) weights, zero biases, unit BN scale."""
    rng = np.random.default_rng(seed)
    params = {}
    for name, shape in parameter_shapes(spec).items():
        layer, kind = name.rsplit(".", 1)
        lkind = spec.layer(layer).kind
        if lkind == "bn":
            params[name] = np.ones(shape, dtype) if kind == "weight" else np.zeros(shape, dtype)
        elif kind == "bias":
            params[name] = np.zeros(shape, dtype)
        else:
            if lkind == "deconv":
                fan_in = shape[0] * math.prod(shape[2:])
            else:
                fan_in = math.prod(shape[1:])
            bound = math.sqrt(6.0 / fan_in)
            params[name] = rng.uniform(-bound, bound, size=shape).astype(dtype)
    return params


class Network:
    """Parameters + buffers for one spec, with a forward pass.

    ``forward`` returns logits for classifiers (softmax layers are skipped;
    call :meth:`predict_proba` for probabilities) and reconstructions for
    autoencoders.
    """

    def __init__(self, spec: ModelSpec, seed: int = 0, dtype=np.float32):
        self.spec = spec
        self.dtype = np.dtype(dtype)
        self.params: dict[str, Tensor] = {
            name: Tensor(arr, requires_grad=True, name=name) for name, arr in init_parameters(spec, seed, dtype).items()
        }
        self.buffers: dict[str, np.ndarray] = {}
        for name, shape in buffer_shapes(spec).items():
            fill = np.zeros if name.endswith("running_mean") else np.ones
            self.buffers[name] = fill(shape, dtype=self.dtype)
        self.eval_bn: set[str] = set()  # BN layers forced to running statistics
        self.pool_indices: dict[str, tuple[np.ndarray, tuple[int, ...]]] = {}

    # state ----------------------------------------------------------------
    def parameters(self) -> list[Tensor]:
        return list(self.params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {k: t.data.copy() for k, t in self.params.items()}
        state.update({k: v.copy() for k, v in self.buffers.items()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray], strict: bool = True) -> None:
        expected = set(self.params) | set(self.buffers)
        if strict and set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise ConfigurationError(f"state mismatch: missing {missing[:5]}, unexpected {extra[:5]}")
        for name, arr in state.items():
            target = self.params[name].data if name in self.params else self.buffers.get(name)
            if target is None:
                continue
            if target.shape != arr.shape:
                raise ConfigurationError(f"{name}: shape {arr.shape} != {target.shape}")
            target[...] = arr

    def set_trainable(self, trainable: dict[str, bool]) -> None:
        for name, flag in trainable.items():
            self.params[name].requires_grad = bool(flag)

    def frozen_bn_layers(self) -> set[str]:
        """BN layers whose scale and shift are both frozen."""
        out = set()
        for layer in self.spec.all_layers():
            if layer.kind == "bn":
                w, b = self.params[f"{layer.name}.weight"], self.params[f"{layer.name}.bias"]
                if not w.requires_grad and not b.requires_grad:
                    out.add(layer.name)
        return out

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    # forward --------------------------------------------------------------
    def _p(self, layer: LayerSpec, kind: str) -> Tensor | None:
        return self.params.get(f"{layer.name}.{kind}")

    def _apply(self, layer: LayerSpec, x: Tensor, train: bool, rng) -> Tensor:
        kind = layer.kind
        if kind == "conv":
            return F.conv_nd(x, self._p(layer, "weight"), self._p(layer, "bias"), layer.get("stride", 1), layer.get("padding", 0))
        if kind == "deconv":
            return F.transposed_conv_nd(
                x, self._p(layer, "weight"), self._p(layer, "bias"), layer.get("stride", 1), layer.get("padding", 0)
            )
        if kind == "bn":
            bn_train = train and layer.name not in self.eval_bn
            return F.batchnorm(
                x,
                self._p(layer, "weight"),
                self._p(layer, "bias"),
                self.buffers[f"{layer.name}.running_mean"],
                self.buffers[f"{layer.name}.running_var"],
                bn_train,
                BN_EPS,
                BN_MOMENTUM,
            )
        if kind == "relu":
            return F.relu(x)
        if kind == "maxpool":
            target = x.shape[2:]
            y, idx = F.maxpool_nd(
                x,
                layer.get("window"),
                layer.get("stride", layer.get("window")),
                layer.get("padding", 0),
                layer.get("adaptive", False),
                dims=layer.get("dims", 3),
            )
            self.pool_indices[layer.name] = (idx, target)
            return y
        if kind == "unpool":
            idx, target = self.pool_indices[layer.get("pool")]
            return F.max_unpool_nd(x, idx, target)
        if kind == "avgpool":
            return F.avgpool_nd(x, layer.get("window"), layer.get("stride", 1), dims=layer.get("dims", 3))
        if kind == "dropout":
            return F.dropout(x, layer.get("rate"), train, rng)
        if kind == "flatten":
            return F.flatten(x)
        if kind == "linear":
            return F.linear(x, self._p(layer, "weight"), self._p(layer, "bias"))
        if kind == "softmax":
            return x
        raise ConfigurationError(f"unsupported layer kind {kind}")

    def forward(self, x, train: bool = False, rng: np.random.Generator | None = None, layers: Iterable[LayerSpec] | None = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(np.asarray(x, dtype=self.dtype))
        if tuple(x.shape[1:]) != tuple(self.spec.input_shape):
            raise ConfigurationError(f"{self.spec.arch} expects input {self.spec.input_shape}, got {x.shape[1:]}")
        outputs = {"input": x}
        for layer in layers if layers is not None else self.spec.layers:
            x = self._apply(layer, x, train, rng)
            sc = self.spec.shortcut_into(layer.name)
            if sc is not None:
                src = outputs[sc.source]
                for ds in sc.downsample:
                    src = self._apply(ds, src, train, rng)
                x = F.relu(x + src)
            if self._needed_later(layer.name):
                outputs[layer.name] = x
        return x

    def _needed_later(self, name: str) -> bool:
        return any(sc.source == name for sc in self.spec.shortcuts)

    __call__ = forward

    def predict_proba(self, x) -> np.ndarray:
        from volclf.tensor_engine.tensor import no_grad

        with no_grad():
            logits = self.forward(x, train=False)
            return F.softmax(logits, axis=1).data
