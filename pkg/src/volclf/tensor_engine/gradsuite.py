"""Finite-difference suite over every differentiable operation and small networks.

Each case draws a fresh random instance per seed, projects the output onto a
fixed random tensor to get a scalar, and compares backward gradients with
central differences in float64.  Whole networks run with batch norm in
inference mode: a conv bias feeding a training-mode batch norm has an exactly
zero gradient, which makes the relative error pure rounding noise.  The
training-mode batch norm is checked on its own.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from volclf.tensor_engine import functional as F
from volclf.tensor_engine.gradcheck import grad_check
from volclf.tensor_engine.tensor import Tensor, mul, reshape, tsum

Case = Callable[[np.random.Generator], tuple[Callable[..., Tensor], list[np.ndarray]]]


def _project(out: Tensor, r: np.ndarray) -> Tensor:
    return tsum(mul(out, Tensor(r)))


def _unary(op: Callable[[Tensor], Tensor], shape) -> Case:
    def case(rng):
        x = rng.standard_normal(shape)
        r = rng.standard_normal(op(Tensor(x)).shape)
        return (lambda t: _project(op(t), r)), [x]

    return case


def _conv(dims: int, stride: int, padding: int) -> Case:
    def case(rng):
        x = rng.standard_normal((2, 2) + (5,) * dims)
        w = rng.standard_normal((3, 2) + (3,) * dims) * 0.5
        b = rng.standard_normal(3)
        r = rng.standard_normal(F.conv_nd(Tensor(x), Tensor(w), Tensor(b), stride, padding).shape)
        return (lambda a, c, d: _project(F.conv_nd(a, c, d, stride, padding), r)), [x, w, b]

    return case


def _deconv(dims: int, stride: int, padding: int) -> Case:
    def case(rng):
        x = rng.standard_normal((2, 3) + (3,) * dims)
        w = rng.standard_normal((3, 2) + (3,) * dims) * 0.5
        b = rng.standard_normal(2)
        r = rng.standard_normal(F.transposed_conv_nd(Tensor(x), Tensor(w), Tensor(b), stride, padding).shape)
        return (lambda a, c, d: _project(F.transposed_conv_nd(a, c, d, stride, padding), r)), [x, w, b]

    return case


def _maxpool(dims: int, adaptive: bool) -> Case:
    return _unary(lambda t: F.maxpool_nd(t, 2, 2, 0, adaptive, dims)[0], (2, 2) + (5 if adaptive else 4,) * dims)


def _unpool(rng):
    x0 = rng.standard_normal((2, 2, 4, 4, 4))
    _, idx = F.maxpool_nd(Tensor(x0), 2, 2)
    pooled = rng.standard_normal(idx.shape)
    r = rng.standard_normal(x0.shape)
    return (lambda t: _project(F.max_unpool_nd(t, idx, (4, 4, 4)), r)), [pooled]


def _batchnorm(train: bool) -> Case:
    def case(rng):
        x = rng.standard_normal((3, 2, 3, 3))
        w = rng.standard_normal(2)
        b = rng.standard_normal(2)
        mean, var = rng.standard_normal(2), rng.uniform(0.5, 2.0, 2)
        r = rng.standard_normal(x.shape)

        def f(a, c, d):
            return _project(F.batchnorm(a, c, d, mean.copy(), var.copy(), train), r)

        return f, [x, w, b]

    return case


def _linear(rng):
    x = rng.standard_normal((3, 4))
    w = rng.standard_normal((2, 4))
    b = rng.standard_normal(2)
    r = rng.standard_normal((3, 2))
    return (lambda a, c, d: _project(F.linear(a, c, d), r)), [x, w, b]


def _dropout(rng):
    x = rng.standard_normal((3, 6))
    seed = int(rng.integers(1 << 30))
    r = rng.standard_normal(x.shape)
    return (lambda t: _project(F.dropout(t, 0.4, True, np.random.default_rng(seed)), r)), [x]


def _binary(op) -> Case:
    def case(rng):
        a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
        r = rng.standard_normal((2, 3))
        return (lambda s, t: _project(op(s, t), r)), [a, b]

    return case


def _cross_entropy(rng):
    z = rng.standard_normal((4, 3))
    y = rng.integers(0, 3, 4)
    return (lambda t: F.cross_entropy_loss(t, y)), [z]


def _mse(rng):
    p = rng.standard_normal((2, 5))
    target = rng.standard_normal((2, 5))
    return (lambda t: F.mse_loss(t, target)), [p]


OPERATION_CASES: dict[str, Case] = {
    "conv3d": _conv(3, 1, 1),
    "conv3d_strided": _conv(3, 2, 0),
    "conv2d": _conv(2, 2, 1),
    "deconv3d": _deconv(3, 1, 0),
    "deconv2d_strided": _deconv(2, 2, 1),
    "maxpool3d": _maxpool(3, False),
    "maxpool3d_adaptive": _maxpool(3, True),
    "maxpool2d": _maxpool(2, False),
    "max_unpool3d": _unpool,
    "avgpool2d": _unary(lambda t: F.avgpool_nd(t, 2, 1, dims=2), (2, 2, 4, 4)),
    "batchnorm_train": _batchnorm(True),
    "batchnorm_eval": _batchnorm(False),
    "relu": _unary(F.relu, (3, 5)),
    "linear": _linear,
    "dropout": _dropout,
    "flatten": _unary(F.flatten, (2, 2, 3)),
    "reshape": _unary(lambda t: reshape(t, (6, 2)), (3, 4)),
    "add": _binary(F.add),
    "mul": _binary(mul),
    "softmax": _unary(lambda t: F.softmax(t, axis=1), (3, 4)),
    "log_softmax": _unary(lambda t: F.log_softmax(t, axis=1), (3, 4)),
    "cross_entropy": _cross_entropy,
    "mse": _mse,
}


def _network_case(build, loss: str = "ce", n_params: int = 3) -> Case:
    from volclf.model_zoo.network import Network

    def case(rng):
        spec = build()
        net = Network(spec, seed=int(rng.integers(1 << 30)), dtype=np.float64)
        names = sorted(net.params)
        # zero biases put unpooled zeros exactly on a ReLU kink; move to a generic point
        for name in names:
            net.params[name].data += rng.normal(0.0, 0.1, net.params[name].shape)
        picks = [names[i] for i in sorted(rng.choice(len(names), size=min(n_params, len(names)), replace=False))]
        x = rng.uniform(0.0, 1.0, (2,) + tuple(spec.input_shape))
        y = np.array([0, 1])

        def f(xt, *ps):
            for name, p in zip(picks, ps):
                net.params[name] = p
            out = net.forward(xt, train=False)
            return F.cross_entropy_loss(out, y) if loss == "ce" else F.mse_loss(out, x)

        return f, [x] + [net.params[n].data.copy() for n in picks]

    return case


def _architectures() -> dict[str, Case]:
    from volclf.model_zoo.builders import build_autoencoder_from, build_conv4_fc3, build_conv5_fc3, build_resnet18_slice

    return {
        "conv5_fc3": _network_case(lambda: build_conv5_fc3((32, 32, 32), dropout=0.0, fc1_width=12)),
        "conv4_fc3": _network_case(lambda: build_conv4_fc3((6, 6, 6), dropout=0.0, conv_padding=1)),
        "resnet18_slice": _network_case(lambda: build_resnet18_slice(2, 32, 4, dropout=0.0)),
        "autoencoder": _network_case(lambda: build_autoencoder_from(build_conv4_fc3((6, 6, 6), conv_padding=1)), "mse"),
    }


NETWORK_STEPS = (1e-4, 1e-5, 1e-6)


def run_case(case: Case, instances: int = 20, seed: int = 0, max_coords: int | None = 12, steps=1e-5) -> float:
    """Worst relative error of one case over ``instances`` random draws."""
    worst = 0.0
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        function, point = case(rng)
        result = grad_check(function, point, steps, max_coords=max_coords, seed=i)
        worst = max(worst, result.max_rel_error)
    return worst


def run_suite(instances: int = 20, seed: int = 0, include_networks: bool = True) -> dict[str, float]:
    out = {name: run_case(case, instances, seed) for name, case in OPERATION_CASES.items()}
    if include_networks:
        for name, case in _architectures().items():
            out[name] = run_case(case, instances, seed, max_coords=6, steps=NETWORK_STEPS)
    return out
