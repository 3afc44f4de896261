"""Compiled vs pure-Python kernel timings.

Usage: python3 benchmarks/kernels_bench.py [--repeat N] [--quick]

Times the four hot loops directly and one conv->pool forward/backward pass
through the engine, once per backend, and prints the speedup.  Both backends
must agree on the outputs; a mismatch aborts the run.
"""

from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from volclf.tensor_engine import _pykernels, kernels
from volclf.tensor_engine import functional as F
from volclf.tensor_engine.tensor import Tensor, backward

try:
    from volclf.tensor_engine import _ckernels
except ImportError:  # pragma: no cover - extension not built
    _ckernels = None


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), statistics.median(times)


def kernel_cases(size, channels):
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, channels, size, size, size)).astype(np.float32)
    k, s = (3, 3, 3), (1, 1, 1)
    o = tuple(d - 2 for d in x.shape[2:])
    cols = _pykernels.im2col(x, k, s, o)
    pk, ps = (2, 2, 2), (2, 2, 2)
    po = tuple(d // 2 for d in x.shape[2:])
    _, idx = _pykernels.maxpool(x, pk, ps, po)
    vals = rng.standard_normal(idx.shape).astype(np.float32)
    flat_vals = vals.reshape(vals.shape[0] * vals.shape[1], -1)
    flat_idx = np.ascontiguousarray(idx.reshape(flat_vals.shape)).astype(np.int64)
    n_out = int(np.prod(x.shape[2:]))
    return {
        "im2col": lambda m: m.im2col(x, k, s, o),
        "col2im": lambda m: m.col2im(cols, x.shape, k, s, o),
        "maxpool": lambda m: m.maxpool(x, pk, ps, po),
        "scatter_add": lambda m: m.scatter_add(flat_vals, flat_idx, n_out),
    }


def network_step(size, channels):
    rng = np.random.default_rng(1)
    x = Tensor(rng.standard_normal((2, 1, size, size, size)).astype(np.float32))
    w = Tensor(rng.standard_normal((channels, 1, 3, 3, 3)).astype(np.float32) * 0.1, requires_grad=True)
    b = Tensor(np.zeros(channels, np.float32), requires_grad=True)

    def run():
        out, _ = F.maxpool_nd(F.relu(F.conv_nd(x, w, b, padding=1)), 2)
        backward(out.sum())
        return out.data

    return run


def same(a, b):
    if isinstance(a, tuple):
        return all(same(u, v) for u, v in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--quick", action="store_true", help="small volumes, for a smoke run")
    args = ap.parse_args(argv)
    if _ckernels is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    size, channels = (12, 4) if args.quick else (32, 8)
    print(f"volume 2x{channels}x{size}^3, best of {args.repeat}")
    print(f"{'case':14s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in kernel_cases(size, channels).items():
        if not same(fn(_pykernels), fn(_ckernels)):
            raise SystemExit(f"{name}: backends disagree")
        py, _ = best_of(lambda: fn(_pykernels), args.repeat)
        cy, _ = best_of(lambda: fn(_ckernels), args.repeat)
        print(f"{name:14s} {py * 1e3:10.2f} {cy * 1e3:10.2f} {py / cy:7.1f}x")
    step = network_step(size, channels)
    timings = {}
    outputs = {}
    for backend in ("python", "cython"):
        kernels.use_backend(backend)
        outputs[backend] = step()
        timings[backend], _ = best_of(step, args.repeat)
    kernels.use_backend("cython")
    if not same(outputs["python"], outputs["cython"]):
        raise SystemExit("conv step: backends disagree")
    py, cy = timings["python"], timings["cython"]
    print(f"{'conv+pool step':14s} {py * 1e3:10.2f} {cy * 1e3:10.2f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
