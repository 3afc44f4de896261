"""Differentiable layer operations.

Spatial operations accept batched ``(N, C, *spatial)`` tensors with two or
three spatial dimensions; an unbatched ``(C, *spatial)`` tensor is accepted
too and the result is returned unbatched.  Internally 2-D data carries a
unit depth axis so one set of kernels serves both cases.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from volclf.errors import ConfigurationError, CorruptionError, DataError, DimensionError
from volclf.tensor_engine import kernels
from volclf.tensor_engine.tensor import Tensor, make_result, reshape


def _triple(value, dims: int) -> tuple[int, int, int]:
    vals = (value,) * dims if np.isscalar(value) else tuple(value)
    if len(vals) != dims:
        raise ConfigurationError(f"expected {dims} values, got {vals}")
    vals = tuple(int(v) for v in vals)
    return vals if dims == 3 else (1,) + vals if dims == 2 else (1, 1) + vals


def _to5d(arr: np.ndarray, dims: int) -> np.ndarray:
    if dims == 3:
        return arr
    return arr.reshape(arr.shape[:2] + (1,) * (3 - dims) + arr.shape[2:])


def _pad5(arr: np.ndarray, lo: Sequence[int], hi: Sequence[int], value=0.0) -> np.ndarray:
    if not any(lo) and not any(hi):
        return np.ascontiguousarray(arr)
    shape = arr.shape[:2] + tuple(e + a + b for e, a, b in zip(arr.shape[2:], lo, hi))
    out = np.full(shape, value, dtype=arr.dtype)
    out[
        :, :, lo[0] : lo[0] + arr.shape[2], lo[1] : lo[1] + arr.shape[3], lo[2] : lo[2] + arr.shape[4]
    ] = arr
    return out


def _crop5(arr: np.ndarray, lo: Sequence[int], extents: Sequence[int]) -> np.ndarray:
    return arr[
        :, :, lo[0] : lo[0] + extents[0], lo[1] : lo[1] + extents[1], lo[2] : lo[2] + extents[2]
    ]


def _batched(x: Tensor, dims: int) -> tuple[Tensor, bool]:
    if x.ndim == dims + 1:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != dims + 2:
        raise DimensionError(f"expected {dims} spatial dims, got input shape {x.shape}")
    return x, False


def _unbatch(y: Tensor, was_unbatched: bool) -> Tensor:
    return reshape(y, y.shape[1:]) if was_unbatched else y


def conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size + 2 * padding - kernel) // stride + 1


def transposed_conv_output_extent(size: int, kernel: int, stride: int, padding: int) -> int:
    return (size - 1) * stride - 2 * padding + kernel


def pool_padding(size: int, window: int, stride: int, padding: int, adaptive: bool) -> tuple[int, int]:
    """Low/high padding used by :func:`maxpool_nd` for one axis."""
    if adaptive:
        return 0, (-size) % stride
    return padding, padding


# convolutions ------------------------------------------------------------


def conv_nd(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Cross-correlation of ``x`` with ``weight`` of shape ``(C_out, C_in, *k)``."""
    dims = weight.ndim - 2
    if dims not in (2, 3):
        raise DimensionError(f"kernel must have 2 or 3 spatial dims, got shape {weight.shape}")
    x, unb = _batched(x, dims)
    n, c = x.shape[:2]
    c_out = weight.shape[0]
    if weight.shape[1] != c:
        raise DimensionError(f"input has {c} channels but kernel expects {weight.shape[1]}")
    if bias is not None and bias.shape != (c_out,):
        raise DimensionError(f"bias shape {bias.shape} != ({c_out},)")
    k = _triple(weight.shape[2:], dims)
    s = _triple(stride, dims)
    p = _triple(padding, dims) if dims == 3 else (0,) + _triple(padding, dims)[1:]
    if min(s) < 1:
        raise ConfigurationError("stride must be >= 1")
    x5 = _to5d(x.data, dims)
    xp = _pad5(x5, p, p)
    o = tuple(conv_output_extent(e, kk, ss, pp) for e, kk, ss, pp in zip(x5.shape[2:], k, s, p))
    if min(o) < 1:
        raise DimensionError(f"kernel {weight.shape[2:]} larger than padded input {x.shape[2:]}")
    cols = kernels.im2col(xp, k, s, o)
    w2 = weight.data.reshape(c_out, -1)
    out = np.matmul(w2, cols)
    if bias is not None:
        out += bias.data[None, :, None]
    spatial = o[3 - dims :]
    out = out.reshape((n, c_out) + spatial)
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, needs):
        g3 = g.reshape(n, c_out, -1)
        gx = gw = gb = None
        if needs[1]:
            gw = np.tensordot(g3, cols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if len(needs) > 2 and needs[2]:
            gb = g3.sum(axis=(0, 2))
        if needs[0]:
            dcols = np.matmul(w2.T, g3)
            dxp = kernels.col2im(dcols, xp.shape, k, s, o)
            gx = np.ascontiguousarray(_crop5(dxp, p, x5.shape[2:])).reshape(x.shape)
        return (gx, gw, gb)[: len(inputs)]

    return _unbatch(make_result("conv", out, inputs, bw), unb)


def transposed_conv_nd(x: Tensor, weight: Tensor, bias: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """Adjoint of :func:`conv_nd`; ``weight`` has shape ``(C_in, C_out, *k)``."""
    dims = weight.ndim - 2
    x, unb = _batched(x, dims)
    n, c_in = x.shape[:2]
    if weight.shape[0] != c_in:
        raise DimensionError(f"input has {c_in} channels but kernel expects {weight.shape[0]}")
    c_out = weight.shape[1]
    k = _triple(weight.shape[2:], dims)
    s = _triple(stride, dims)
    p = _triple(padding, dims) if dims == 3 else (0,) + _triple(padding, dims)[1:]
    x5 = _to5d(x.data, dims)
    i_ext = x5.shape[2:]
    full = tuple((e - 1) * ss + kk for e, kk, ss in zip(i_ext, k, s))
    o = tuple(f - 2 * pp for f, pp in zip(full, p))
    if min(o) < 1:
        raise DimensionError(f"transposed conv output extent {o} < 1")
    w2 = weight.data.reshape(c_in, -1)
    x3 = x5.reshape(n, c_in, -1)
    cols = np.matmul(w2.T, x3)
    outp = kernels.col2im(cols, (n, c_out) + full, k, s, i_ext)
    out = np.ascontiguousarray(_crop5(outp, p, o))
    if bias is not None:
        out += bias.data.reshape(1, -1, 1, 1, 1)
    out = out.reshape((n, c_out) + o[3 - dims :])
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, needs):
        g5 = _pad5(_to5d(g, dims), p, p)
        gcols = kernels.im2col(g5, k, s, i_ext)
        gx = gw = gb = None
        if needs[0]:
            gx = np.matmul(w2, gcols).reshape(x.shape)
        if needs[1]:
            gw = np.tensordot(x3, gcols, axes=([0, 2], [0, 2])).reshape(weight.shape)
        if len(needs) > 2 and needs[2]:
            gb = g.reshape(n, c_out, -1).sum(axis=(0, 2))
        return (gx, gw, gb)[: len(inputs)]

    return _unbatch(make_result("transposed_conv", out, inputs, bw), unb)


# pooling -------------------------------------------------------------------


def maxpool_nd(x: Tensor, window=2, stride=None, padding=0, adaptive: bool = False, dims: int = 3):
    """Max pooling returning ``(output, indices)``.

    ``dims`` is the number of spatial axes (pass 2 for slice models).

    ``indices`` hold, per output element, the linear index of the winning
    input element within its ``(n, c)`` spatial grid, the format consumed by
    :func:`max_unpool_nd`.  With ``adaptive`` each axis is padded at the high
    end to the next multiple of ``stride``.  Padded cells never win: for the
    non-negative inputs seen after ReLU this equals zero padding.
    """
    x, unb = _batched(x, dims)
    stride = window if stride is None else stride
    k = _triple(window, dims)
    s = _triple(stride, dims)
    if min(k) < 1 or min(s) < 1:
        raise ConfigurationError("window and stride must be >= 1")
    x5 = _to5d(x.data, dims)
    ext = x5.shape[2:]
    pads = [
        (0, 0) if i < 3 - dims else pool_padding(e, kk, ss, padding, adaptive)
        for i, (e, kk, ss) in enumerate(zip(ext, k, s))
    ]
    lo = [a for a, _ in pads]
    hi = [b for _, b in pads]
    if any(a >= kk for a, kk in zip(lo, k)) or any(b >= kk and not adaptive for b, kk in zip(hi, k)):
        raise ConfigurationError("padding must be smaller than the pooling window")
    xp = _pad5(x5, lo, hi, value=-np.inf)
    o = tuple((e + a + b - kk) // ss + 1 for e, a, b, kk, ss in zip(ext, lo, hi, k, s))
    if min(o) < 1:
        raise DimensionError(f"pooling window {k} larger than input {ext}")
    vals, pidx = kernels.maxpool(xp, k, s, o)
    # padded-grid linear index -> unpadded linear index
    hp, wp = xp.shape[3], xp.shape[4]
    zi, rem = np.divmod(pidx, hp * wp)
    yi, xi = np.divmod(rem, wp)
    idx = ((zi - lo[0]) * ext[1] + (yi - lo[1])) * ext[2] + (xi - lo[2])
    n, c = x.shape[:2]
    size = ext[0] * ext[1] * ext[2]
    out_shape = (n, c) + o[3 - dims :]
    idx = idx.reshape(out_shape)

    def bw(g, needs):
        flat = kernels.scatter_add(
            np.ascontiguousarray(g.reshape(n * c, -1)), np.ascontiguousarray(idx.reshape(n * c, -1)), size
        )
        return (flat.reshape(x.shape),)

    y = make_result("maxpool", vals.reshape(out_shape), (x,), bw)
    if unb:
        return _unbatch(y, True), idx[0]
    return y, idx


def max_unpool_nd(x: Tensor, indices: np.ndarray, target_shape: Sequence[int]) -> Tensor:
    """Scatter pooled values back to their recorded positions; zeros elsewhere."""
    target_shape = tuple(int(t) for t in target_shape)
    dims = len(target_shape)
    unb = x.ndim == dims + 1
    if unb:
        x = reshape(x, (1,) + x.shape)
        indices = indices[None]
    if indices.shape != x.shape:
        raise CorruptionError(f"indices shape {indices.shape} != input shape {x.shape}")
    n, c = x.shape[:2]
    size = int(np.prod(target_shape))
    flat_idx = np.ascontiguousarray(indices.reshape(n * c, -1))
    if flat_idx.size and (flat_idx.min() < 0 or flat_idx.max() >= size):
        raise CorruptionError(f"unpool index outside target shape {target_shape}")
    out = np.zeros((n * c, size), dtype=x.dtype)
    np.put_along_axis(out, flat_idx, x.data.reshape(n * c, -1), axis=1)
    out = out.reshape((n, c) + target_shape)

    def bw(g, needs):
        return (np.take_along_axis(g.reshape(n * c, size), flat_idx, axis=1).reshape(x.shape),)

    return _unbatch(make_result("max_unpool", out, (x,), bw), unb)


def avgpool_nd(x: Tensor, window, stride=1, dims: int = 3) -> Tensor:
    x, unb = _batched(x, dims)
    k = _triple(window, dims)
    s = _triple(stride, dims)
    x5 = np.ascontiguousarray(_to5d(x.data, dims))
    o = tuple(conv_output_extent(e, kk, ss, 0) for e, kk, ss in zip(x5.shape[2:], k, s))
    if min(o) < 1:
        raise DimensionError(f"pooling window {k} larger than input {x5.shape[2:]}")
    n, c = x.shape[:2]
    kvol = k[0] * k[1] * k[2]
    cols = kernels.im2col(x5, k, s, o).reshape(n, c, kvol, -1)
    out = cols.mean(axis=2).reshape((n, c) + o[3 - dims :])

    def bw(g, needs):
        g4 = np.broadcast_to(g.reshape(n, c, 1, -1) / kvol, (n, c, kvol, g[0, 0].size))
        dx = kernels.col2im(np.ascontiguousarray(g4).reshape(n, c * kvol, -1), x5.shape, k, s, o)
        return (dx.reshape(x.shape),)

    return _unbatch(make_result("avgpool", out, (x,), bw), unb)


# normalization / activations ------------------------------------------------


def batchnorm(
    x: Tensor,
    weight: Tensor,
    bias: Tensor,
    running_mean: np.ndarray,
    running_var: np.ndarray,
    train: bool,
    eps: float = 1e-5,
    momentum: float = 0.1,
) -> Tensor:
    """Per-channel batch normalization over ``(N, C, ...)``.

    In training mode ``running_mean``/``running_var`` are updated in place
    (unbiased variance, exponential moving average with ``momentum``).
    """
    c = x.shape[1]
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, c) + (1,) * (x.ndim - 2)
    count = x.size // c
    if train:
        if x.shape[0] < 2:
            raise ConfigurationError("batch normalization in training mode needs a batch of at least 2")
        mean = x.data.mean(axis=axes)
        centered = x.data - mean.reshape(bshape)
        var = np.mean(centered * centered, axis=axes)
        running_mean *= 1 - momentum
        running_mean += momentum * mean
        running_var *= 1 - momentum
        running_var += momentum * var * (count / max(count - 1, 1))
    else:
        mean = running_mean
        var = running_var
        centered = x.data - mean.reshape(bshape)
    inv_std = (1.0 / np.sqrt(var + eps)).astype(x.dtype)
    xhat = centered * inv_std.reshape(bshape)
    out = xhat * weight.data.reshape(bshape) + bias.data.reshape(bshape)

    def bw(g, needs):
        gw = (g * xhat).sum(axis=axes) if needs[1] else None
        gb = g.sum(axis=axes) if needs[2] else None
        gx = None
        if needs[0]:
            scale = (weight.data * inv_std).reshape(bshape)
            if train:
                gsum = g.sum(axis=axes).reshape(bshape)
                gxhat = (g * xhat).sum(axis=axes).reshape(bshape)
                gx = scale * (g - gsum / count - xhat * gxhat / count)
            else:
                gx = g * scale
        return gx, gw, gb

    return make_result("batchnorm", out, (x, weight, bias), bw)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", x.data * mask, (x,), lambda g, needs: (g * mask,))


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight.T + bias`` with ``weight`` of shape ``(out, in)``."""
    if x.shape[-1] != weight.shape[1]:
        raise DimensionError(f"linear: input features {x.shape[-1]} != weight in_features {weight.shape[1]}")
    out = x.data @ weight.data.T
    if bias is not None:
        out = out + bias.data
    inputs = (x, weight) if bias is None else (x, weight, bias)

    def bw(g, needs):
        gx = g @ weight.data if needs[0] else None
        gw = g.reshape(-1, g.shape[-1]).T @ x.data.reshape(-1, x.shape[-1]) if needs[1] else None
        gb = g.reshape(-1, g.shape[-1]).sum(axis=0) if len(needs) > 2 and needs[2] else None
        return (gx, gw, gb)[: len(inputs)]

    return make_result("linear", out, inputs, bw)


def dropout(x: Tensor, rate: float, train: bool, rng: np.random.Generator | None = None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if not train or rate == 0.0:
        return x
    if rng is None:
        raise ConfigurationError("dropout in training mode needs a random generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) * x.dtype.type(1.0 / (1.0 - rate))
    return make_result("dropout", x.data * keep, (x,), lambda g, needs: (g * keep,))


def flatten(x: Tensor) -> Tensor:
    return reshape(x, (x.shape[0], -1))


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"cannot add shapes {a.shape} and {b.shape}")
    return a + b


def _log_softmax_data(z: np.ndarray, axis: int) -> np.ndarray:
    shifted = z - z.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def softmax(x: Tensor, axis: int = 1) -> Tensor:
    axis = axis if x.ndim > 1 else 0
    p = np.exp(_log_softmax_data(x.data, axis))

    def bw(g, needs):
        return (p * (g - (g * p).sum(axis=axis, keepdims=True)),)

    return make_result("softmax", p, (x,), bw)


def log_softmax(x: Tensor, axis: int = 1) -> Tensor:
    axis = axis if x.ndim > 1 else 0
    ls = _log_softmax_data(x.data, axis)

    def bw(g, needs):
        return (g - np.exp(ls) * g.sum(axis=axis, keepdims=True),)

    return make_result("log_softmax", ls, (x,), bw)


def cross_entropy_loss(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels)
    if logits.ndim == 1:
        logits = reshape(logits, (1,) + logits.shape)
        labels = labels.reshape(1)
    n, n_class = logits.shape
    if labels.shape != (n,):
        raise DimensionError(f"labels shape {labels.shape} != ({n},)")
    if labels.size and (labels.min() < 0 or labels.max() >= n_class or not np.issubdtype(labels.dtype, np.integer)):
        raise DataError(f"labels must be integers in [0, {n_class})")
    ls = _log_softmax_data(logits.data, 1)
    picked = ls[np.arange(n), labels]
    loss = np.asarray(-picked.mean(), dtype=logits.dtype)

    def bw(g, needs):
        grad = np.exp(ls)
        grad[np.arange(n), labels] -= 1.0
        return (grad * (g / n),)

    return make_result("cross_entropy", loss, (logits,), bw)


def mse_loss(prediction: Tensor, target: Tensor | np.ndarray) -> Tensor:
    if not isinstance(target, Tensor):
        target = Tensor(np.asarray(target, dtype=prediction.dtype))
    if prediction.shape != target.shape:
        raise DimensionError(f"mse_loss: shape {prediction.shape} != {target.shape}")
    diff = prediction.data - target.data
    n = diff.size
    loss = np.asarray(np.mean(diff * diff), dtype=prediction.dtype)

    def bw(g, needs):
        d = diff * (2.0 * g / n)
        return (d if needs[0] else None, -d if needs[1] else None)

    return make_result("mse", loss, (prediction, target), bw)
