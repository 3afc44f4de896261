# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the convolution and pooling loops.

Same contracts as ``_pykernels``; arrays must be C-contiguous 5-D
``(N, C, D, H, W)`` of float32 or float64.
"""

import numpy as np
from cython cimport floating
from libc.string cimport memcpy


def _dtype_of(const floating[:, :, :, :, ::1] arr):
    if floating is float:
        return np.float32
    return np.float64


def im2col(const floating[:, :, :, :, ::1] xp, k, s, o):
    cdef Py_ssize_t n_batch = xp.shape[0], n_chan = xp.shape[1]
    cdef Py_ssize_t dp = xp.shape[2], hp = xp.shape[3], wp = xp.shape[4]
    cdef Py_ssize_t kd = k[0], kh = k[1], kw = k[2]
    cdef Py_ssize_t sd = s[0], sh = s[1], sw = s[2]
    cdef Py_ssize_t od = o[0], oh = o[1], ow = o[2]
    out = np.empty((n_batch, n_chan * kd * kh * kw, od * oh * ow), dtype=_dtype_of(xp))
    cdef floating[:, :, ::1] cols = out
    if out.size == 0:
        return out
    cdef const floating* src = &xp[0, 0, 0, 0, 0]
    cdef floating* dst = &cols[0, 0, 0]
    cdef const floating* plane
    cdef const floating* line
    cdef Py_ssize_t n, c, a, b, e, z, y, x
    with nogil:
        for n in range(n_batch):
            for c in range(n_chan):
                plane = src + (n * n_chan + c) * dp * hp * wp
                for a in range(kd):
                    for b in range(kh):
                        for e in range(kw):
                            for z in range(od):
                                for y in range(oh):
                                    line = plane + ((z * sd + a) * hp + y * sh + b) * wp + e
                                    if sw == 1:
                                        memcpy(dst, line, ow * sizeof(floating))
                                    else:
                                        for x in range(ow):
                                            dst[x] = line[x * sw]
                                    dst += ow
    return out


def col2im(const floating[:, :, ::1] cols, padded_shape, k, s, o):
    cdef Py_ssize_t kd = k[0], kh = k[1], kw = k[2]
    cdef Py_ssize_t sd = s[0], sh = s[1], sw = s[2]
    cdef Py_ssize_t od = o[0], oh = o[1], ow = o[2]
    dtype = np.float32 if floating is float else np.float64
    out = np.zeros(tuple(padded_shape), dtype=dtype)
    cdef floating[:, :, :, :, ::1] xp = out
    if out.size == 0 or cols.size == 0:
        return out
    cdef Py_ssize_t n_batch = xp.shape[0], n_chan = xp.shape[1]
    cdef Py_ssize_t dp = xp.shape[2], hp = xp.shape[3], wp = xp.shape[4]
    cdef const floating* src = &cols[0, 0, 0]
    cdef floating* dst = &xp[0, 0, 0, 0, 0]
    cdef floating* plane
    cdef floating* line
    cdef Py_ssize_t n, c, a, b, e, z, y, x
    with nogil:
        for n in range(n_batch):
            for c in range(n_chan):
                plane = dst + (n * n_chan + c) * dp * hp * wp
                for a in range(kd):
                    for b in range(kh):
                        for e in range(kw):
                            for z in range(od):
                                for y in range(oh):
                                    line = plane + ((z * sd + a) * hp + y * sh + b) * wp + e
                                    for x in range(ow):
                                        line[x * sw] += src[x]
                                    src += ow
    return out


def maxpool(const floating[:, :, :, :, ::1] xp, k, s, o):
    cdef Py_ssize_t n_batch = xp.shape[0], n_chan = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[3], wp = xp.shape[4]
    cdef Py_ssize_t kd = k[0], kh = k[1], kw = k[2]
    cdef Py_ssize_t sd = s[0], sh = s[1], sw = s[2]
    cdef Py_ssize_t od = o[0], oh = o[1], ow = o[2]
    vals_arr = np.empty((n_batch, n_chan, od, oh, ow), dtype=_dtype_of(xp))
    idx_arr = np.empty((n_batch, n_chan, od, oh, ow), dtype=np.int64)
    cdef floating[:, :, :, :, ::1] vals = vals_arr
    cdef long long[:, :, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t n, c, a, b, e, z, y, x, zz, yy, xx
    cdef long long best_i
    cdef floating best, v
    with nogil:
        for n in range(n_batch):
            for c in range(n_chan):
                for z in range(od):
                    for y in range(oh):
                        for x in range(ow):
                            zz = z * sd
                            yy = y * sh
                            xx = x * sw
                            best = xp[n, c, zz, yy, xx]
                            best_i = (zz * hp + yy) * wp + xx
                            for a in range(kd):
                                for b in range(kh):
                                    for e in range(kw):
                                        v = xp[n, c, zz + a, yy + b, xx + e]
                                        if v > best:
                                            best = v
                                            best_i = ((zz + a) * hp + yy + b) * wp + xx + e
                            vals[n, c, z, y, x] = best
                            idx[n, c, z, y, x] = best_i
    return vals_arr, idx_arr


def scatter_add(const floating[:, ::1] values, const long long[:, ::1] idx, Py_ssize_t size):
    cdef Py_ssize_t rows = values.shape[0], m = values.shape[1]
    dtype = np.float32 if floating is float else np.float64
    out_arr = np.zeros((rows, size), dtype=dtype)
    cdef floating[:, ::1] out = out_arr
    cdef Py_ssize_t r, j
    with nogil:
        for r in range(rows):
            for j in range(m):
                out[r, idx[r, j]] += values[r, j]
    return out_arr
