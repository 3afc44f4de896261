"""Backend selection for the convolution/pooling hot loops.

The compiled ``_ckernels`` extension is used when it imports; otherwise the
numpy implementations in ``_pykernels`` take over.  Setting the environment
variable ``VOLCLF_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from volclf.tensor_engine import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("VOLCLF_PURE_PYTHON"):
    try:
        from volclf.tensor_engine import _ckernels as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _pykernels


def use_backend(name: str) -> None:
    """Switch implementations at runtime ("cython" or "python")."""
    global _impl, BACKEND
    if name == "python":
        _impl = _pykernels
    elif name == "cython":
        from volclf.tensor_engine import _ckernels

        _impl = _ckernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name


def im2col(xp, k, s, o):
    return _impl.im2col(xp, tuple(k), tuple(s), tuple(o))


def col2im(cols, padded_shape, k, s, o):
    return _impl.col2im(cols, tuple(padded_shape), tuple(k), tuple(s), tuple(o))


def maxpool(xp, k, s, o):
    return _impl.maxpool(xp, tuple(k), tuple(s), tuple(o))


def scatter_add(values, idx, size):
    return _impl.scatter_add(values, idx, int(size))
