"""Reverse-mode automatic differentiation over dense float64 tensors.

A ``Tape`` records every primitive executed while it is active (one active
tape per thread); ``backward`` replays the records in exact reverse order
and accumulates adjoints additively. Leaf tensors (parameters, watched
inputs) keep a persistent ``grad`` buffer; intermediate adjoints live only
for the duration of one backward sweep, so calling ``backward`` twice on the
same root exactly doubles every leaf gradient.

Only scalar-with-tensor and equal-shape broadcasting are supported; every
other shape relationship must go through an explicit structural primitive
(``concat_rows``, ``outer_add_rows``, ``gather_pairs``, ...).
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "Parameter",
    "Tape",
    "GradError",
    "backward",
    "record_primitive",
    "matmul",
    "add",
    "sub",
    "mul",
    "neg",
    "sigmoid",
    "tanh",
    "exp",
    "log_softmax",
    "logaddexp",
    "sum_all",
    "reshape",
    "slice_block",
    "concat_rows",
    "concat_cols",
    "gather_pairs",
    "outer_add_rows",
    "add_bias",
]


class GradError(ValueError):
    """Shape mismatch, non-scalar root, or non-finite op result."""


class Tensor:
    """Dense float64 array plus (for leaves) an accumulated gradient."""

    __slots__ = ("data", "grad", "is_leaf")

    def __init__(self, data, is_leaf: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.is_leaf = is_leaf
        self.grad = np.zeros_like(arr) if is_leaf else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise GradError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad[...] = 0.0

    def __repr__(self) -> str:
        kind = "leaf" if self.is_leaf else "node"
        return f"Tensor(shape={self.shape}, {kind})"


class Parameter:
    """Named leaf tensor; ``grad`` has the same shape as ``value``."""

    __slots__ = ("name", "tensor")

    def __init__(self, name: str, value):
        self.name = name
        self.tensor = Tensor(value, is_leaf=True)

    @property
    def value(self) -> np.ndarray:
        return self.tensor.data

    @value.setter
    def value(self, arr) -> None:
        a = np.asarray(arr, dtype=np.float64)
        if a.shape != self.tensor.data.shape:
            raise GradError(f"parameter {self.name}: shape {a.shape} != {self.tensor.data.shape}")
        self.tensor.data = a

    @property
    def grad(self) -> np.ndarray:
        return self.tensor.grad

    def zero_grad(self) -> None:
        self.tensor.zero_grad()

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.tensor.shape})"


# One active tape per thread; independent tapes on different threads never
# share state.
_LOCAL = threading.local()


def _active_tape() -> "Tape | None":
    return getattr(_LOCAL, "tape", None)


BackwardFn = Callable[[np.ndarray], Iterable[tuple[Tensor, np.ndarray]]]


class Tape:
    """Ordered record of executed primitives, replayed in reverse by backward."""

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []

    def __enter__(self) -> "Tape":
        if _active_tape() is not None:
            raise GradError("a tape is already active on this thread")
        _LOCAL.tape = self
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        _LOCAL.tape = None

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], bwd: BackwardFn) -> None:
        self._records.append((out, inputs, bwd))

    def backward(self, root: Tensor) -> None:
        """Accumulate d(root)/d(leaf) into every reachable leaf's grad."""
        if root.size != 1:
            raise GradError(f"backward root must be scalar, got shape {root.shape}")
        adjoint: dict[Tensor, np.ndarray] = {}

        def contribute(t: Tensor, g: np.ndarray) -> None:
            if t.is_leaf:
                t.grad += g
            else:
                existing = adjoint.get(t)
                if existing is None:
                    adjoint[t] = g
                else:
                    existing += g

        contribute(root, np.ones_like(root.data))
        for out, _inputs, bwd in reversed(self._records):
            g = adjoint.pop(out, None)
            if g is None:
                continue
            for t, contrib in bwd(g):
                contribute(t, contrib)


def backward(root: Tensor) -> None:
    tape = _active_tape()
    if tape is None:
        raise GradError("backward() requires an active tape")
    tape.backward(root)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _check_finite(arr: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise GradError(f"{op} produced non-finite values (overflow is an error)")


def record_primitive(out_data: np.ndarray, inputs: Sequence[Tensor], bwd: BackwardFn) -> Tensor:
    """Wrap a precomputed result as a tape node. Extension point for fused kernels."""
    out = Tensor(out_data)
    tape = _active_tape()
    if tape is not None:
        tape.record(out, tuple(inputs), bwd)
    return out


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """C = A @ B for A (m,k), B (k,n). dA = g @ B.T, dB = A.T @ g."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise GradError(f"matmul shapes {a.shape} x {b.shape}")
    out = a.data @ b.data
    _check_finite(out, "matmul")

    def bwd(g):
        return ((a, g @ b.data.T), (b, a.data.T @ g))

    return record_primitive(out, (a, b), bwd)


def _binary_shapes(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape:
        return
    if a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise GradError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


def _reduce_to(g: np.ndarray, t: Tensor) -> np.ndarray:
    # scalar operand broadcast against a tensor: adjoint is the full sum
    if t.data.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "add")
    out = a.data + b.data
    _check_finite(out, "add")

    def bwd(g):
        return ((a, _reduce_to(g, a)), (b, _reduce_to(g, b)))

    return record_primitive(out, (a, b), bwd)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "sub")
    out = a.data - b.data
    _check_finite(out, "sub")

    def bwd(g):
        return ((a, _reduce_to(g, a)), (b, _reduce_to(-g, b)))

    return record_primitive(out, (a, b), bwd)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _binary_shapes(a, b, "mul")
    out = a.data * b.data
    _check_finite(out, "mul")

    def bwd(g):
        return ((a, _reduce_to(g * b.data, a)), (b, _reduce_to(g * a.data, b)))

    return record_primitive(out, (a, b), bwd)


def neg(x) -> Tensor:
    x = _as_tensor(x)

    def bwd(g):
        return ((x, -g),)

    return record_primitive(-x.data, (x,), bwd)


def sigmoid(x) -> Tensor:
    x = _as_tensor(x)
    d = x.data
    out = np.empty_like(d)
    pos = d >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-d[pos]))
    ez = np.exp(d[~pos])
    out[~pos] = ez / (1.0 + ez)

    def bwd(g):
        return ((x, g * out * (1.0 - out)),)

    return record_primitive(out, (x,), bwd)


def tanh(x) -> Tensor:
    x = _as_tensor(x)
    out = np.tanh(x.data)

    def bwd(g):
        return ((x, g * (1.0 - out * out)),)

    return record_primitive(out, (x,), bwd)


def exp(x) -> Tensor:
    x = _as_tensor(x)
    with np.errstate(over="ignore"):
        out = np.exp(x.data)
    _check_finite(out, "exp")

    def bwd(g):
        return ((x, g * out),)

    return record_primitive(out, (x,), bwd)


def log_softmax(x) -> Tensor:
    """Log-softmax over the final axis, stabilized by max subtraction."""
    x = _as_tensor(x)
    d = x.data
    if d.ndim == 0:
        raise GradError("log_softmax needs at least one axis")
    m = d.max(axis=-1, keepdims=True)
    s = d - m
    lse = np.log(np.sum(np.exp(s), axis=-1, keepdims=True))
    out = s - lse

    def bwd(g):
        soft = np.exp(out)
        return ((x, g - soft * g.sum(axis=-1, keepdims=True)),)

    return record_primitive(out, (x,), bwd)


def logaddexp(a, b) -> Tensor:
    """Elementwise log(exp(a) + exp(b)) with max subtraction; equal shapes only."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.shape != b.shape:
        raise GradError(f"logaddexp shapes {a.shape} != {b.shape}")
    m = np.maximum(a.data, b.data)
    out = m + np.log(np.exp(a.data - m) + np.exp(b.data - m))

    def bwd(g):
        return ((a, g * np.exp(a.data - out)), (b, g * np.exp(b.data - out)))

    return record_primitive(out, (a, b), bwd)


def sum_all(x) -> Tensor:
    x = _as_tensor(x)
    out = np.asarray(x.data.sum())
    _check_finite(out, "sum_all")

    def bwd(g):
        return ((x, np.full_like(x.data, float(g))),)

    return record_primitive(out, (x,), bwd)


def reshape(x, shape: tuple[int, ...]) -> Tensor:
    x = _as_tensor(x)
    out = x.data.reshape(shape).copy()

    def bwd(g):
        return ((x, g.reshape(x.data.shape)),)

    return record_primitive(out, (x,), bwd)


def slice_block(x, r0: int, r1: int, c0: int, c1: int) -> Tensor:
    """Copy of the 2-D block x[r0:r1, c0:c1]; adjoint scatters back."""
    x = _as_tensor(x)
    if x.data.ndim != 2:
        raise GradError("slice_block expects a 2-D tensor")
    out = x.data[r0:r1, c0:c1].copy()

    def bwd(g):
        full = np.zeros_like(x.data)
        full[r0:r1, c0:c1] = g
        return ((x, full),)

    return record_primitive(out, (x,), bwd)


def _concat(parts: Sequence[Tensor], axis: int, op: str) -> Tensor:
    ts = [_as_tensor(p) for p in parts]
    if not ts:
        raise GradError(f"{op} of zero parts")
    out = np.concatenate([t.data for t in ts], axis=axis)
    offsets = np.cumsum([0] + [t.data.shape[axis] for t in ts])

    def bwd(g):
        sl = [slice(None)] * g.ndim
        contribs = []
        for t, lo, hi in zip(ts, offsets[:-1], offsets[1:]):
            sl[axis] = slice(lo, hi)
            contribs.append((t, g[tuple(sl)].copy()))
        return contribs

    return record_primitive(out, tuple(ts), bwd)


def concat_rows(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, 0, "concat_rows")


def concat_cols(parts: Sequence[Tensor]) -> Tensor:
    return _concat(parts, 1, "concat_cols")


def gather_pairs(x, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """out[k] = x[rows[k], cols[k]]; adjoint scatter-adds (duplicates accumulate)."""
    x = _as_tensor(x)
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = x.data[rows, cols]

    def bwd(g):
        full = np.zeros_like(x.data)
        np.add.at(full, (rows, cols), g)
        return ((x, full),)

    return record_primitive(out, (x,), bwd)


def outer_add_rows(a, b) -> Tensor:
    """All pairwise row sums: out[i*n + j, :] = a[i, :] + b[j, :] for a (m,d), b (n,d)."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[1]:
        raise GradError(f"outer_add_rows shapes {a.shape} and {b.shape}")
    m, d = a.shape
    n = b.shape[0]
    out = (a.data[:, None, :] + b.data[None, :, :]).reshape(m * n, d)
    _check_finite(out, "outer_add_rows")

    def bwd(g):
        g3 = g.reshape(m, n, d)
        return ((a, g3.sum(axis=1)), (b, g3.sum(axis=0)))

    return record_primitive(out, (a, b), bwd)


def add_bias(x, b) -> Tensor:
    """x (m,n) plus a length-n bias row; adjoint of the bias is the column sum."""
    x, b = _as_tensor(x), _as_tensor(b)
    if x.data.ndim != 2 or b.data.ndim != 1 or b.shape[0] != x.shape[1]:
        raise GradError(f"add_bias shapes {x.shape} and {b.shape}")
    out = x.data + b.data[None, :]
    _check_finite(out, "add_bias")

    def bwd(g):
        return ((x, g), (b, g.sum(axis=0)))

    return record_primitive(out, (x, b), bwd)
