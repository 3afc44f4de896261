"""Pure-numpy implementations of the hot loops.

Every function works on 5-D arrays ``(N, C, D, H, W)``; 2-D callers insert a
unit depth axis.  The Cython module ``_ckernels`` exposes the same functions
with identical semantics and is preferred when it is importable.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _strided_windows(xp, k, s, o):
    win = sliding_window_view(xp, tuple(k), axis=(2, 3, 4))
    return win[
        :,
        :,
        : (o[0] - 1) * s[0] + 1 : s[0],
        : (o[1] - 1) * s[1] + 1 : s[1],
        : (o[2] - 1) * s[2] + 1 : s[2],
    ]


def im2col(xp, k, s, o):
    """Gather receptive fields into ``(N, C*kd*kh*kw, od*oh*ow)``."""
    n, c = xp.shape[:2]
    out = np.empty((n, c, k[0], k[1], k[2], o[0], o[1], o[2]), dtype=xp.dtype)
    for a in range(k[0]):
        za = slice(a, a + (o[0] - 1) * s[0] + 1, s[0])
        for b in range(k[1]):
            yb = slice(b, b + (o[1] - 1) * s[1] + 1, s[1])
            for e in range(k[2]):
                xe = slice(e, e + (o[2] - 1) * s[2] + 1, s[2])
                out[:, :, a, b, e] = xp[:, :, za, yb, xe]
    return out.reshape(n, c * k[0] * k[1] * k[2], o[0] * o[1] * o[2])


def col2im(cols, padded_shape, k, s, o):
    """Scatter-add columns back onto a zero array of ``padded_shape``."""
    n, c = padded_shape[:2]
    out = np.zeros(padded_shape, dtype=cols.dtype)
    c8 = cols.reshape(n, c, k[0], k[1], k[2], o[0], o[1], o[2])
    for a in range(k[0]):
        za = slice(a, a + (o[0] - 1) * s[0] + 1, s[0])
        for b in range(k[1]):
            yb = slice(b, b + (o[1] - 1) * s[1] + 1, s[1])
            for e in range(k[2]):
                xe = slice(e, e + (o[2] - 1) * s[2] + 1, s[2])
                out[:, :, za, yb, xe] += c8[:, :, a, b, e]
    return out


def maxpool(xp, k, s, o):
    """Max over windows of a padded array.

    Returns the pooled values and, for each output, the linear index of the
    winning element inside the padded spatial grid.  Ties go to the lowest
    linear index.
    """
    n, c, dp, hp, wp = xp.shape
    win = _strided_windows(xp, k, s, o)
    flat = np.ascontiguousarray(win).reshape(n, c, o[0], o[1], o[2], -1)
    local = flat.argmax(axis=-1)
    vals = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    a, rem = np.divmod(local, k[1] * k[2])
    b, e = np.divmod(rem, k[2])
    z = np.arange(o[0]).reshape(-1, 1, 1) * s[0] + a
    y = np.arange(o[1]).reshape(1, -1, 1) * s[1] + b
    x = np.arange(o[2]).reshape(1, 1, -1) * s[2] + e
    idx = (z * hp + y) * wp + x
    return np.ascontiguousarray(vals), idx.astype(np.int64)


def scatter_add(values, idx, size):
    """Sum ``values[r, j]`` into ``out[r, idx[r, j]]`` for 2-D inputs."""
    rows = values.shape[0]
    offsets = (np.arange(rows, dtype=np.int64) * size)[:, None]
    flat = np.bincount((idx + offsets).ravel(), weights=values.ravel(), minlength=rows * size)
    return flat.astype(values.dtype, copy=False).reshape(rows, size)
