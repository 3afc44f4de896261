"""Dense tensors with a reverse-mode differentiation record."""

from __future__ import annotations

import contextlib
import itertools
import threading
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from volclf.errors import DimensionError, UsageError

DEFAULT_DTYPE = np.float32

_sequence = itertools.count()
_local = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_local, "grad_enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable recording for the enclosed forward computations."""
    previous = is_grad_enabled()
    _local.grad_enabled = False
    try:
        yield
    finally:
        _local.grad_enabled = previous


def check_finite(arr: np.ndarray, op: str) -> None:
    # the cheap reduction catches almost everything; confirm before raising
    if arr.size and not np.isfinite(arr.sum()) and not np.isfinite(arr).all():
        raise FloatingPointError(f"{op} produced non-finite values")


class Node:
    """One recorded operation: its inputs and the closure computing input grads."""

    __slots__ = ("op", "inputs", "backward_fn", "seq", "consumed")

    def __init__(self, op: str, inputs: tuple[Tensor, ...], backward_fn: Callable):
        self.op = op
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.seq = next(_sequence)
        self.consumed = False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._node: Node | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> Tensor:
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # arithmetic -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self.dtype), -1.0))

    def __rsub__(self, other):
        return add(_as_tensor(other, self.dtype), mul(self, -1.0))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self) -> Tensor:
        return tsum(self)

    def mean(self) -> Tensor:
        return mul(tsum(self), 1.0 / self.size)

    def reshape(self, *shape) -> Tensor:
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def _as_tensor(value, dtype) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(np.asarray(value, dtype=dtype))


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Wrap ``data`` and record the operation when any input needs a gradient.

    ``backward_fn(grad_out, needs)`` returns one gradient (or ``None``) per input;
    ``needs`` flags which inputs require one so the closure can skip work.
    """
    check_finite(data, op)
    out = Tensor(data)
    if is_grad_enabled() and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._node = Node(op, tuple(inputs), backward_fn)
    return out


@dataclass
class DiffRecord:
    """Operations reachable from a loss, in topological (creation) order."""

    entries: list[Node] = field(default_factory=list)

    @classmethod
    def from_loss(cls, loss: Tensor) -> DiffRecord:
        seen: dict[int, Node] = {}
        stack = [loss._node] if loss._node is not None else []
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen[id(node)] = node
            for t in node.inputs:
                if t._node is not None and id(t._node) not in seen:
                    stack.append(t._node)
        return cls(sorted(seen.values(), key=lambda n: n.seq))

    @property
    def consumed(self) -> bool:
        return any(n.consumed for n in self.entries)

    def __len__(self) -> int:
        return len(self.entries)


def backward(loss: Tensor, record: DiffRecord | None = None) -> None:
    """Populate ``.grad`` on every leaf tensor with ``requires_grad``."""
    if loss.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._node is None:
        if loss.requires_grad:
            loss.grad = np.ones_like(loss.data) if loss.grad is None else loss.grad + 1
            return
        raise UsageError("loss is not connected to any tensor requiring a gradient")
    if record is None:
        record = DiffRecord.from_loss(loss)
    if record.consumed:
        raise UsageError("backward already ran on this graph; run a new forward pass")

    grads: dict[int, np.ndarray] = {id(loss._node): np.ones_like(loss.data)}
    for node in reversed(record.entries):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        needs = tuple(t.requires_grad for t in node.inputs)
        in_grads = node.backward_fn(g, needs)
        for t, need, gi in zip(node.inputs, needs, in_grads):
            if not need or gi is None:
                continue
            if gi.shape != t.shape:
                raise DimensionError(f"{node.op}: gradient shape {gi.shape} != input shape {t.shape}")
            if t._node is not None:
                key = id(t._node)
                grads[key] = grads[key] + gi if key in grads else gi
            else:
                t.grad = gi.astype(t.dtype, copy=True) if t.grad is None else t.grad + gi
    for node in record.entries:
        node.consumed = True
        node.backward_fn = None


# elementary ops used by the operator overloads --------------------------


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a = _as_tensor(a, getattr(b, "dtype", None))
    b = _as_tensor(b, a.dtype)
    out = a.data + b.data

    def bw(g, needs):
        return (
            _unbroadcast(g, a.shape) if needs[0] else None,
            _unbroadcast(g, b.shape) if needs[1] else None,
        )

    return make_result("add", out, (a, b), bw)


def mul(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        scalar = float(b)
        out = a.data * a.data.dtype.type(scalar)
        return make_result("scale", out, (a,), lambda g, needs: (g * g.dtype.type(scalar),))
    a = _as_tensor(a, b.dtype)
    out = a.data * b.data

    def bw(g, needs):
        return (
            _unbroadcast(g * b.data, a.shape) if needs[0] else None,
            _unbroadcast(g * a.data, b.shape) if needs[1] else None,
        )

    return make_result("mul", out, (a, b), bw)


def tsum(a: Tensor) -> Tensor:
    out = np.asarray(a.data.sum(dtype=a.dtype), dtype=a.dtype)
    return make_result("sum", out, (a,), lambda g, needs: (np.broadcast_to(g, a.shape).copy(),))


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out = a.data.reshape(shape)
    return make_result("reshape", out, (a,), lambda g, needs: (g.reshape(a.shape),))
