"""Dense float64 tensors with reverse-mode automatic differentiation.

Kernels are computed by numpy; differentiation is done by recording every
primitive on an explicit :class:`Tape` and replaying it in reverse. All
arrays are 64-bit floats and marked read-only, so tensors are safe to share
across threads. A tape is single-writer: build it and read gradients from
one thread at a time.
"""

from __future__ import annotations

import threading
from collections.abc import Mapping
from dataclasses import dataclass
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Tape",
    "gradients",
    "ParameterSet",
    "AdamState",
    "adam_step",
]


class ShapeError(ValueError):
    """Raised when operand shapes do not conform to an op's contract."""


_LOCAL = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_LOCAL, "stack", None)
    if stack is None:
        stack = []
        _LOCAL.stack = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


def _freeze(arr: np.ndarray) -> np.ndarray:
    if arr.flags.writeable:
        arr.flags.writeable = False
    return arr


class Tensor:
    """Immutable dense tensor (row-major float64)."""

    __slots__ = ("data", "_tape", "_node")

    def __init__(self, data) -> None:
        arr = np.array(data, dtype=np.float64)  # defensive copy
        self.data = _freeze(arr)
        self._tape = None
        self._node = -1

    @classmethod
    def _wrap(cls, arr: np.ndarray, tape: "Tape | None" = None, node: int = -1) -> "Tensor":
        out = cls.__new__(cls)
        out.data = _freeze(np.asarray(arr, dtype=np.float64))
        out._tape = tape
        out._node = node
        return out

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"expected a scalar tensor, got shape {self.data.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape})"

    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return sub(self, _as_tensor(other))

    def __rsub__(self, other):
        return sub(_as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __matmul__(self, other):
        return matmul(self, _as_tensor(other))

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered record of primitive ops for one reverse-mode pass.

    Use as a context manager; ops executed inside record themselves. Watched
    tensors become named leaves whose gradients :func:`gradients` reports.
    """

    __slots__ = ("_ops", "_next", "_params")

    def __init__(self) -> None:
        self._ops: list[tuple[int, tuple[tuple[int, Callable], ...]]] = []
        self._next = 0
        self._params: dict[str, tuple[int, tuple[int, ...]]] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self
        stack.pop()

    def _new_node(self) -> int:
        node = self._next
        self._next += 1
        return node

    def watch(self, name: str, value: Tensor | np.ndarray) -> Tensor:
        """Register a named parameter leaf and return its taped handle."""
        if name in self._params:
            raise ValueError(f"parameter {name!r} already watched on this tape")
        value = _as_tensor(value)
        node = self._new_node()
        self._params[name] = (node, value.data.shape)
        return Tensor._wrap(value.data, self, node)


def _record(out: np.ndarray, inputs: Sequence[Tensor], vjps: Sequence[Callable | None]) -> Tensor:
    tape = _active_tape()
    if tape is None:
        return Tensor._wrap(out)
    parents = tuple(
        (t._node, vjp)
        for t, vjp in zip(inputs, vjps)
        if vjp is not None and t._tape is tape
    )
    if not parents:
        return Tensor._wrap(out)
    node = tape._new_node()
    tape._ops.append((node, parents))
    return Tensor._wrap(out, tape, node)


def gradients(tape: Tape, loss: Tensor) -> dict[str, Tensor]:
    """Gradients of a scalar loss w.r.t. every watched parameter.

    Parameters that never fed into the loss get zero gradients. Replaying
    the same tape twice yields bitwise identical results.
    """
    if loss.data.size != 1:
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    grads: dict[int, np.ndarray] = {}
    if loss._tape is tape and loss._node >= 0:
        grads[loss._node] = np.ones_like(loss.data)
    for out_node, parents in reversed(tape._ops):
        g = grads.pop(out_node, None)
        if g is None:
            continue
        for parent_node, vjp in parents:
            contrib = vjp(g)
            acc = grads.get(parent_node)
            grads[parent_node] = contrib if acc is None else acc + contrib
    out: dict[str, Tensor] = {}
    for name, (node, shape) in tape._params.items():
        g = grads.get(node)
        out[name] = Tensor._wrap(np.zeros(shape) if g is None else g)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a gradient over the axes numpy broadcast into existence."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


# ---------------------------------------------------------------------------
# primitives
# ---------------------------------------------------------------------------


def _broadcast_op(name: str, a: Tensor, b: Tensor, fn) -> np.ndarray:
    try:
        return fn(a.data, b.data)
    except ValueError:
        raise ShapeError(f"{name}: cannot broadcast shapes {a.shape} and {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    out = _broadcast_op("add", a, b, np.add)
    return _record(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(g, b.data.shape),
    ))


def sub(a: Tensor, b: Tensor) -> Tensor:
    out = _broadcast_op("sub", a, b, np.subtract)
    return _record(out, (a, b), (
        lambda g: _unbroadcast(g, a.data.shape),
        lambda g: _unbroadcast(-g, b.data.shape),
    ))


def mul(a: Tensor, b: Tensor) -> Tensor:
    out = _broadcast_op("mul", a, b, np.multiply)
    return _record(out, (a, b), (
        lambda g: _unbroadcast(g * b.data, a.data.shape),
        lambda g: _unbroadcast(g * a.data, b.data.shape),
    ))


def neg(a: Tensor) -> Tensor:
    return _record(-a.data, (a,), (lambda g: -g,))


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    return _record(a.data * c, (a,), (lambda g: g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = _broadcast_op("matmul", a, b, np.matmul)

    def vjp_a(g: np.ndarray) -> np.ndarray:
        return _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.data.shape)

    def vjp_b(g: np.ndarray) -> np.ndarray:
        return _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.data.shape)

    return _record(out, (a, b), (vjp_a, vjp_b))


def relu(a: Tensor) -> Tensor:
    out = np.maximum(a.data, 0.0)
    return _record(out, (a,), (lambda g: g * (a.data > 0.0),))


def sigmoid(a: Tensor) -> Tensor:
    out = _sigmoid_nd(a.data)
    return _record(out, (a,), (lambda g: g * out * (1.0 - out),))


def _sigmoid_nd(x: np.ndarray) -> np.ndarray:
    # exp on the non-positive branch only, so it never overflows
    pos = x >= 0
    z = np.exp(np.where(pos, -x, x))
    return np.where(pos, 1.0 / (1.0 + z), z / (1.0 + z))


def softplus(a: Tensor) -> Tensor:
    out = np.log1p(np.exp(-np.abs(a.data))) + np.maximum(a.data, 0.0)
    return _record(out, (a,), (lambda g: g * _sigmoid_nd(a.data),))


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def vjp(g: np.ndarray) -> np.ndarray:
        return out * (g - (g * out).sum(axis=-1, keepdims=True))

    return _record(out, (a,), (vjp,))


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to zero mean / unit variance, then affine."""
    d = x.shape[-1]
    if gain.shape != (d,) or bias.shape != (d,):
        raise ShapeError(
            f"layer_norm: gain/bias must have shape ({d},), got {gain.shape} and {bias.shape}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gain.data + bias.data

    def vjp_x(g: np.ndarray) -> np.ndarray:
        gx = g * gain.data
        term1 = gx * inv
        term2 = xhat * (gx * xhat).sum(axis=-1, keepdims=True) * inv / d
        term3 = inv * gx.sum(axis=-1, keepdims=True) / d
        return term1 - term2 - term3

    def vjp_gain(g: np.ndarray) -> np.ndarray:
        return _unbroadcast(g * xhat, gain.data.shape)

    def vjp_bias(g: np.ndarray) -> np.ndarray:
        return _unbroadcast(g, bias.data.shape)

    return _record(out, (x, gain, bias), (vjp_x, vjp_gain, vjp_bias))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        shapes = ", ".join(str(t.shape) for t in tensors)
        raise ShapeError(f"concat: shapes do not align along axis {axis}: {shapes}") from None
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def make_vjp(i: int) -> Callable:
        lo, hi = offsets[i], offsets[i + 1]

        def vjp(g: np.ndarray) -> np.ndarray:
            index = [slice(None)] * g.ndim
            index[axis] = slice(lo, hi)
            return g[tuple(index)]

        return vjp

    return _record(out, tensors, tuple(make_vjp(i) for i in range(len(tensors))))


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    return _record(a.data.reshape(shape), (a,), (lambda g: g.reshape(a.data.shape),))


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))
    return _record(np.transpose(a.data, axes), (a,), (lambda g: np.transpose(g, inverse),))


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError:
        raise ShapeError(f"broadcast_to: cannot broadcast {a.shape} to {shape}") from None
    return _record(out, (a,), (lambda g: _unbroadcast(g, a.data.shape),))


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    index = [slice(None)] * a.ndim
    index[axis] = slice(start, stop)
    index = tuple(index)
    out = a.data[index]

    def vjp(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(a.data)
        full[index] = g
        return full

    return _record(out, (a,), (vjp,))


def sum(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g: np.ndarray) -> np.ndarray:
        if axis is None or keepdims:
            return np.broadcast_to(g, a.data.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.data.shape).copy()

    return _record(out, (a,), (vjp,))


def mean(a: Tensor, axis: int | None = None, keepdims: bool = False) -> Tensor:
    n = a.data.size if axis is None else a.data.shape[axis]
    return scale(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Gather rows of a 2-D table; gradients scatter-add back."""
    if table.ndim != 2:
        raise ShapeError(f"embedding_lookup: table must be 2-D, got {table.shape}")
    idx = np.asarray(ids, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise IndexError(
            f"embedding_lookup: ids out of range [0, {table.shape[0]}) for table {table.shape}"
        )
    out = table.data[idx]

    def vjp(g: np.ndarray) -> np.ndarray:
        full = np.zeros_like(table.data)
        np.add.at(full, idx, g)
        return full

    return _record(out, (table,), (vjp,))


# ---------------------------------------------------------------------------
# parameters and the Adam optimizer
# ---------------------------------------------------------------------------


class ParameterSet(Mapping):
    """Named, flat, ordered collection of parameter tensors.

    Two sets built from the same model config share names and shapes and are
    elementwise combinable. Instances are immutable.
    """

    __slots__ = ("_tensors",)

    def __init__(self, tensors: Mapping[str, Tensor | np.ndarray]) -> None:
        self._tensors = {name: _as_tensor(t) for name, t in tensors.items()}

    def __getitem__(self, name: str) -> Tensor:
        return self._tensors[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def names(self) -> tuple[str, ...]:
        return tuple(self._tensors)

    def replace(self, updates: Mapping[str, Tensor | np.ndarray]) -> "ParameterSet":
        unknown = set(updates) - set(self._tensors)
        if unknown:
            raise KeyError(f"unknown parameter names: {sorted(unknown)}")
        merged = dict(self._tensors)
        merged.update({k: _as_tensor(v) for k, v in updates.items()})
        return ParameterSet(merged)

    def equal_bytes(self, other: "ParameterSet") -> bool:
        """Bitwise equality of names, shapes and values."""
        if self.names() != other.names():
            return False
        return all(
            a.data.shape == b.data.shape and a.data.tobytes() == b.data.tobytes()
            for (a, b) in ((self[n], other[n]) for n in self.names())
        )


@dataclass(frozen=True)
class AdamState:
    """First/second moment estimates plus the step counter."""

    step: int
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]

    @classmethod
    def initial(cls, params: ParameterSet) -> "AdamState":
        return cls(
            step=0,
            m={n: np.zeros_like(params[n].data) for n in params.names()},
            v={n: np.zeros_like(params[n].data) for n in params.names()},
        )


def adam_step(
    params: ParameterSet,
    grads: Mapping[str, Tensor | np.ndarray],
    state: AdamState | None = None,
    lr: float = 1e-4,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> tuple[ParameterSet, AdamState]:
    """One Adam update; returns the new parameters and optimizer state."""
    if set(grads) != set(params.names()):
        missing = set(params.names()) ^ set(grads)
        raise KeyError(f"gradient keys do not match parameter names, mismatch: {sorted(missing)}")
    if state is None:
        state = AdamState.initial(params)
    t = state.step + 1
    bc1 = 1.0 - beta1**t
    bc2 = 1.0 - beta2**t
    new_params: dict[str, Tensor] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    for name in params.names():
        g = grads[name]
        g = g.data if isinstance(g, Tensor) else np.asarray(g, dtype=np.float64)
        p = params[name].data
        if g.shape != p.shape:
            raise ShapeError(f"adam_step: gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        m = beta1 * state.m[name] + (1.0 - beta1) * g
        v = beta2 * state.v[name] + (1.0 - beta2) * (g * g)
        update = lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
        new_params[name] = Tensor._wrap(p - update)
        new_m[name] = m
        new_v[name] = v
    return ParameterSet(new_params), AdamState(t, new_m, new_v)


def finite_difference(fn: Callable[[np.ndarray], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central finite-difference gradient of a scalar function, used as an oracle."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = grad.reshape(-1)
    xf = x.copy().reshape(-1)
    for i in range(xf.size):
        orig = xf[i]
        xf[i] = orig + step
        hi = fn(xf.reshape(x.shape))
        xf[i] = orig - step
        lo = fn(xf.reshape(x.shape))
        xf[i] = orig
        flat[i] = (hi - lo) / (2.0 * step)
    return grad


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-3) -> float:
    """Max elementwise |a-n| / max(|a|, |n|, floor)."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    if a.size == 0:
        return 0.0
    return float(np.max(np.abs(a - n) / denom))
