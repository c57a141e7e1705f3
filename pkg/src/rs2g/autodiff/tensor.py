"""Dense float64 tensors with tape-based reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient. Outside a tape nothing is recorded,
which is how inference runs.
"""

from __future__ import annotations

import os
from typing import Callable, Iterable, Sequence

import numpy as np

_DEBUG = os.environ.get("RS2G_DEBUG", "") not in ("", "0")
_TAPES: list["Tape"] = []


def set_debug(enabled: bool) -> None:
    """Toggle the per-operation finiteness check."""
    global _DEBUG
    _DEBUG = bool(enabled)


def debug_enabled() -> bool:
    return _DEBUG


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "is_leaf", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(d <= 0 for d in arr.shape):
            raise ValueError(f"tensor dimensions must be positive, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("tensor data contains NaN or Inf")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.is_leaf = True
        self.name = name

    @classmethod
    def _result(cls, arr: np.ndarray, requires_grad: bool) -> "Tensor":
        t = object.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t.is_leaf = not requires_grad
        t.name = None
        return t

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor._result(self.data, False)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # operators
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def sum(self, axis=None, keepdims: bool = False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis, keepdims)

    def max(self, axis=None, keepdims: bool = False):
        return max_(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


BackwardFn = Callable[[np.ndarray], Sequence["np.ndarray | None"]]


class Tape:
    """Ordered record of executed operations.

    Use as a context manager; :meth:`backward` walks the records in reverse
    exactly once. A second call raises, so gradients are never silently
    accumulated twice from the same forward pass.
    """

    def __init__(self):
        self.records: list[tuple[Tensor, tuple[Tensor, ...], BackwardFn]] = []
        self._consumed = False

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], fn: BackwardFn) -> None:
        self.records.append((out, inputs, fn))

    def backward(self, loss: Tensor) -> None:
        """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf."""
        if self._consumed:
            raise RuntimeError("backward already ran on this tape; record a new forward pass")
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if not loss.requires_grad:
            raise ValueError("loss does not depend on any tensor that requires grad")
        self._consumed = True
        if loss.is_leaf:
            _accumulate_leaf(loss, np.ones_like(loss.data))
            return
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        found = False
        for out, inputs, fn in reversed(self.records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            found = True
            in_grads = fn(g)
            for inp, gi in zip(inputs, in_grads):
                if gi is None or not inp.requires_grad:
                    continue
                if inp.is_leaf:
                    _accumulate_leaf(inp, gi)
                else:
                    key = id(inp)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
        if not found:
            raise ValueError("loss was not produced on this tape")


def _accumulate_leaf(t: Tensor, g: np.ndarray) -> None:
    if g.shape != t.data.shape:
        g = np.broadcast_to(g, t.data.shape)
    t.grad = np.array(g, dtype=np.float64) if t.grad is None else t.grad + g


def backward(loss: Tensor, tape: Tape | None = None) -> None:
    """Run the backward pass for ``loss`` on ``tape`` (default: innermost active)."""
    if tape is None:
        if not _TAPES:
            raise RuntimeError("no active tape")
        tape = _TAPES[-1]
    tape.backward(loss)


# ---------------------------------------------------------------- helpers


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._result(np.asarray(x, dtype=np.float64), False)


def _emit(arr: np.ndarray, inputs: tuple[Tensor, ...], fn: BackwardFn, op: str) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"{op} produced a non-finite value")
    rg = bool(_TAPES) and any(t.requires_grad for t in inputs)
    out = Tensor._result(arr, rg)
    if rg:
        _TAPES[-1].record(out, inputs, fn)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _check_broadcast(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ValueError(f"{op}: shapes {a.shape} and {b.shape} do not conform") from None


# ------------------------------------------------------------ elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _check_broadcast(a, b, "add")
    sa, sb = a.shape, b.shape
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _check_broadcast(a, b, "sub")
    sa, sb = a.shape, b.shape
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _check_broadcast(a, b, "mul")
    ad, bd = a.data, b.data

    def fn(g):
        return (_unbroadcast(g * bd, ad.shape) if a.requires_grad else None,
                _unbroadcast(g * ad, bd.shape) if b.requires_grad else None)

    return _emit(ad * bd, (a, b), fn, "mul")


def div(a, b) -> Tensor:
    """Elementwise division; ``b`` may be a python scalar."""
    a, b = as_tensor(a), as_tensor(b)
    if a.shape != b.shape:
        _check_broadcast(a, b, "div")
    ad, bd = a.data, b.data
    out = ad / bd

    def fn(g):
        ga = _unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = _unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return _emit(out, (a, b), fn, "div")


def scalar_divide(a, s: float) -> Tensor:
    return div(a, float(s))


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _emit(-a.data, (a,), lambda g: (-g,), "neg")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    # tanh form avoids exp overflow for large |x|
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _emit(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _emit(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _emit(a.data * mask, (a,), lambda g: (g * mask,), "relu")


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _emit(out, (a,), lambda g: (g * out,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    ad = a.data
    return _emit(np.log(ad), (a,), lambda g: (g / ad,), "log")


def clamp_min(a, floor: float) -> Tensor:
    """max(a, floor) elementwise; gradient flows only where a > floor."""
    a = as_tensor(a)
    mask = a.data > floor
    return _emit(np.where(mask, a.data, floor), (a,), lambda g: (g * mask,), "clamp_min")


def straight_through(a, value: np.ndarray) -> Tensor:
    """Forward ``value`` (same shape as ``a``); backward as the identity on ``a``."""
    a = as_tensor(a)
    value = np.asarray(value, dtype=np.float64)
    if value.shape != a.shape:
        raise ValueError(f"straight_through: value shape {value.shape} != input shape {a.shape}")
    return _emit(value.copy(), (a,), lambda g: (g,), "straight_through")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def fn(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _emit(out, (a,), fn, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    sm = np.exp(out)

    def fn(g):
        return (g - sm * g.sum(axis=axis, keepdims=True),)

    return _emit(out, (a,), fn, "log_softmax")


# ----------------------------------------------------------- linear algebra


def matmul(a, b) -> Tensor:
    """Matrix product with numpy semantics for 1-D and batched operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ValueError(f"matmul: scalar operand, shapes {a.shape} and {b.shape}")
    ka = a.shape[-1]
    kb = b.shape[0] if b.ndim == 1 else b.shape[-2]
    if ka != kb:
        raise ValueError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data
    out = np.matmul(ad, bd)

    def fn(g):
        a2 = ad[None, :] if ad.ndim == 1 else ad
        b2 = bd[:, None] if bd.ndim == 1 else bd
        g2 = g
        if ad.ndim == 1:
            g2 = np.expand_dims(g2, -2)
        if bd.ndim == 1:
            g2 = np.expand_dims(g2, -1)
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g2, np.swapaxes(b2, -1, -2)), a2.shape).reshape(ad.shape)
        if b.requires_grad:
            gb = _unbroadcast(np.matmul(np.swapaxes(a2, -1, -2), g2), b2.shape).reshape(bd.shape)
        return ga, gb

    return _emit(out, (a, b), fn, "matmul")


# -------------------------------------------------------------- structure


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ValueError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise ValueError(f"concat: shapes {[t.shape for t in ts]} do not conform on axis {axis}") from None
    ax = axis % out.ndim
    bounds = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _emit(out, ts, fn, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ValueError("stack needs at least one tensor")
    shapes = {t.shape for t in ts}
    if len(shapes) != 1:
        raise ValueError(f"stack: shapes {[t.shape for t in ts]} differ")
    out = np.stack([t.data for t in ts], axis=axis)
    ax = axis % out.ndim

    def fn(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return _emit(out, ts, fn, "stack")


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ValueError(f"reshape: cannot view shape {src} as {tuple(shape)}") from None
    return _emit(out, (a,), lambda g: (g.reshape(src),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _emit(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, ax1: int, ax2: int) -> Tensor:
    a = as_tensor(a)
    return _emit(np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),), "swapaxes")


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, slice, type(None), type(Ellipsis))) for i in items)


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]
    basic = _is_basic_index(index)
    src = a.shape

    def fn(g):
        full = np.zeros(src)
        if basic:
            full[index] = g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _emit(np.array(out, dtype=np.float64), (a,), fn, "getitem")


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    out = np.broadcast_to(a.data, shape)
    return _emit(out, (a,), lambda g: (_unbroadcast(g, src),), "broadcast_to")


# ------------------------------------------------------------- reductions


def _expand(g: np.ndarray, src: tuple[int, ...], axis, keepdims: bool) -> np.ndarray:
    if axis is not None and not keepdims:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        axes = tuple(ax % len(src) for ax in axes)
        g = np.expand_dims(g, axes)
    return np.broadcast_to(g, src)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    out = np.asarray(a.data.sum(axis=axis, keepdims=keepdims), dtype=np.float64)
    return _emit(out, (a,), lambda g: (_expand(g, src, axis, keepdims),), "sum")


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    src = a.shape
    out = np.asarray(a.data.mean(axis=axis, keepdims=keepdims), dtype=np.float64)
    count = a.size / max(out.size, 1)
    return _emit(out, (a,), lambda g: (_expand(g, src, axis, keepdims) / count,), "mean")


def max_(a, axis=None, keepdims: bool = False) -> Tensor:
    """Max reduction; tied maxima share the gradient equally."""
    a = as_tensor(a)
    src = a.shape
    ad = a.data
    out_k = ad.max(axis=axis, keepdims=True)
    out = out_k if keepdims else np.asarray(ad.max(axis=axis), dtype=np.float64)

    def fn(g):
        mask = ad == out_k
        mask = mask / mask.sum(axis=axis, keepdims=True)
        return (_expand(g, src, axis, keepdims) * mask,)

    return _emit(np.asarray(out, dtype=np.float64), (a,), fn, "max")


__all__ = [
    "Tensor", "Tape", "backward", "as_tensor", "set_debug", "debug_enabled",
    "add", "sub", "mul", "div", "scalar_divide", "neg", "sigmoid", "tanh", "relu",
    "exp", "log", "clamp_min", "straight_through", "softmax", "log_softmax", "matmul", "concat", "stack",
    "reshape", "transpose", "swapaxes", "getitem", "broadcast_to", "sum_", "mean", "max_",
]
