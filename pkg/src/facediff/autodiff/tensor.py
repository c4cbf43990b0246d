"""Dense tensors with reverse-mode automatic differentiation.

A dynamic tape is recorded as ops execute; calling :meth:`Tensor.backward` on a
scalar walks the graph once in reverse topological order. Tapes are single-use.
Float32 is the working precision; building leaves as float64 propagates 64-bit
through every op, which is what the finite-difference gradient checks rely on.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Optional, Sequence, Union

import numpy as np

DEFAULT_DTYPE = np.float32

_grad_enabled = True
_finite_checks = False


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / data prep)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


@contextlib.contextmanager
def finite_checks():
    """Validate every op output for NaN/Inf inside the block (slow; tests)."""
    global _finite_checks
    prev = _finite_checks
    _finite_checks = True
    try:
        yield
    finally:
        _finite_checks = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


ArrayLike = Union["Tensor", np.ndarray, float, int, list]


class Tensor:
    """A dense array plus an optional gradient and tape linkage."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple = ()
        self._backward: Optional[Callable[[np.ndarray], None]] = None
        self._consumed = False

    # -- construction helpers -------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents: Sequence["Tensor"],
              backward: Callable[[np.ndarray], None]) -> "Tensor":
        if _finite_checks and not np.all(np.isfinite(data)):
            raise FloatingPointError("non-finite values produced by a primitive")
        req = _grad_enabled and any(p.requires_grad for p in parents)
        out = Tensor(data)
        if req:
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self) -> tuple:
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

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    # -- backward -------------------------------------------------------------

    def backward(self) -> None:
        """Reverse-mode pass from a scalar; accumulates into `.grad` of leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss")
        if not self.requires_grad:
            raise ValueError("loss does not require grad (no recorded graph)")
        if self._consumed:
            raise RuntimeError("tape already consumed by a previous backward()")
        self._consumed = True

        topo: list[Tensor] = []
        visited = set()
        stack = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))

        grads: dict[int, np.ndarray] = {id(self): np.ones_like(self.data)}
        for node in reversed(topo):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                # leaf: accumulate
                if node.grad is None:
                    node.grad = g.copy()
                else:
                    node.grad = node.grad + g
            else:
                for p, pg in node._backward(g):
                    if not p.requires_grad:
                        continue
                    key = id(p)
                    if key in grads:
                        grads[key] = grads[key] + pg
                    else:
                        grads[key] = pg
                node._backward = None  # single-use tape
                node._parents = ()

    # -- arithmetic -----------------------------------------------------------

    def _coerce(self, other: ArrayLike) -> "Tensor":
        if isinstance(other, Tensor):
            return other
        return Tensor(np.asarray(other, dtype=self.data.dtype))

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            return [(a, _unbroadcast(g, a.shape)),
                                 (b, _unbroadcast(g, b.shape))]
        out = Tensor._make(a.data + b.data, (a, b), bwd)
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        a = self

        def bwd(g):
            return [(a, -g)]
        out = Tensor._make(-a.data, (a,), bwd)
        return out

    def __sub__(self, other: ArrayLike) -> "Tensor":
        return self + (-self._coerce(other))

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return self._coerce(other) + (-self)

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            return [(a, _unbroadcast(g * b.data, a.shape)),
                                 (b, _unbroadcast(g * a.data, b.shape))]
        out = Tensor._make(a.data * b.data, (a, b), bwd)
        return out

    __rmul__ = __mul__

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            return [(a, _unbroadcast(g / b.data, a.shape)),
                                 (b, _unbroadcast(-g * a.data / (b.data * b.data), b.shape))]
        out = Tensor._make(a.data / b.data, (a, b), bwd)
        return out

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return self._coerce(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        a = self
        p = float(exponent)

        def bwd(g):
            return [(a, g * p * a.data ** (p - 1.0))]
        out = Tensor._make(a.data ** p, (a,), bwd)
        return out

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        other = self._coerce(other)
        a, b = self, other

        def bwd(g):
            if b.data.ndim == 1:
                ga = np.expand_dims(g, -1) * b.data
            else:
                ga = g @ np.swapaxes(b.data, -1, -2)
            if a.data.ndim == 1:
                gb = np.expand_dims(a.data, -1) * np.expand_dims(g, -2)
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            return [(a, _unbroadcast(ga, a.shape)),
                                 (b, _unbroadcast(gb, b.shape))]
        out = Tensor._make(a.data @ b.data, (a, b), bwd)
        return out

    # -- elementwise functions ------------------------------------------------

    def exp(self) -> "Tensor":
        a = self
        val = np.exp(a.data)

        def bwd(g):
            return [(a, g * val)]
        out = Tensor._make(val, (a,), bwd)
        return out

    def log(self) -> "Tensor":
        a = self

        def bwd(g):
            return [(a, g / a.data)]
        out = Tensor._make(np.log(a.data), (a,), bwd)
        return out

    def sqrt(self) -> "Tensor":
        a = self
        val = np.sqrt(a.data)

        def bwd(g):
            return [(a, g * 0.5 / val)]
        out = Tensor._make(val, (a,), bwd)
        return out

    def tanh(self) -> "Tensor":
        a = self
        val = np.tanh(a.data)

        def bwd(g):
            return [(a, g * (1.0 - val * val))]
        out = Tensor._make(val, (a,), bwd)
        return out

    def sigmoid(self) -> "Tensor":
        a = self
        val = 1.0 / (1.0 + np.exp(-a.data))

        def bwd(g):
            return [(a, g * val * (1.0 - val))]
        out = Tensor._make(val, (a,), bwd)
        return out

    def abs(self) -> "Tensor":
        a = self

        def bwd(g):
            return [(a, g * np.sign(a.data))]
        out = Tensor._make(np.abs(a.data), (a,), bwd)
        return out

    # -- reductions -----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self

        def bwd(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return [(a, np.broadcast_to(gg, a.shape).copy())]
        out = Tensor._make(a.data.sum(axis=axis, keepdims=keepdims), (a,), bwd)
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        a = self
        n = a.data.size if axis is None else np.prod(
            [a.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

        def bwd(g):
            gg = g
            if axis is not None and not keepdims:
                gg = np.expand_dims(gg, axis)
            return [(a, np.broadcast_to(gg, a.shape) / n)]
        out = Tensor._make(a.data.mean(axis=axis, keepdims=keepdims), (a,), bwd)
        return out

    # -- shape ops ------------------------------------------------------------

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        a = self

        def bwd(g):
            return [(a, g.reshape(a.shape))]
        out = Tensor._make(a.data.reshape(shape), (a,), bwd)
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        a = self
        axes = axes or tuple(reversed(range(a.ndim)))
        inv = np.argsort(axes)

        def bwd(g):
            return [(a, g.transpose(inv))]
        out = Tensor._make(a.data.transpose(axes), (a,), bwd)
        return out

    def __getitem__(self, idx) -> "Tensor":
        a = self

        def bwd(g):
            ga = np.zeros_like(a.data)
            np.add.at(ga, idx, g)
            return [(a, ga)]
        out = Tensor._make(a.data[idx], (a,), bwd)
        return out


def tensor(data, requires_grad: bool = False, dtype=None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, dtype=dtype)


def zeros(shape, dtype=None) -> Tensor:
    return Tensor(np.zeros(shape, dtype=dtype or DEFAULT_DTYPE))


def ones(shape, dtype=None) -> Tensor:
    return Tensor(np.ones(shape, dtype=dtype or DEFAULT_DTYPE))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)
    sizes = [t.shape[axis] for t in parts]
    offs = np.cumsum([0] + sizes)

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        outs = []
        for t, lo, hi in zip(parts, offs[:-1], offs[1:]):
            slicer[axis] = slice(lo, hi)
            outs.append((t, g[tuple(slicer)]))
        return outs
    out = Tensor._make(np.concatenate([t.data for t in parts], axis=axis), parts, bwd)
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(tensors)

    def bwd(g):
        gs = np.split(g, len(parts), axis=axis)
        return [(t, np.squeeze(gi, axis=axis)) for t, gi in zip(parts, gs)]
    out = Tensor._make(np.stack([t.data for t in parts], axis=axis), parts, bwd)
    return out


def pad_axis(x: Tensor, axis: int, before: int, after: int) -> Tensor:
    """Zero-pad `x` along one axis."""
    if before == 0 and after == 0:
        return x
    widths = [(0, 0)] * x.ndim
    widths[axis] = (before, after)
    a = x

    def bwd(g):
        slicer = [slice(None)] * g.ndim
        slicer[axis] = slice(before, g.shape[axis] - after)
        return [(a, g[tuple(slicer)])]
    out = Tensor._make(np.pad(a.data, widths), (a,), bwd)
    return out


def where(cond: np.ndarray, a: Tensor, b: Tensor) -> Tensor:
    """Select elementwise by a constant boolean mask (not differentiable in cond)."""
    ta, tb = a, b

    def bwd(g):
        return [(ta, _unbroadcast(np.where(cond, g, 0.0), ta.shape)),
                             (tb, _unbroadcast(np.where(cond, 0.0, g), tb.shape))]
    out = Tensor._make(np.where(cond, ta.data, tb.data), (ta, tb), bwd)
    return out


def maximum(a: Tensor, scalar: float) -> Tensor:
    t = a
    mask = a.data > scalar

    def bwd(g):
        return [(t, g * mask)]
    out = Tensor._make(np.maximum(t.data, scalar), (t,), bwd)
    return out


def minimum(a: Tensor, scalar: float) -> Tensor:
    t = a
    mask = a.data < scalar

    def bwd(g):
        return [(t, g * mask)]
    out = Tensor._make(np.minimum(t.data, scalar), (t,), bwd)
    return out


class Parameter(Tensor):
    """A named leaf tensor that collects gradients during backward."""

    __slots__ = ("name",)

    def __init__(self, data, name: str, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)
        self.name = name

    @property
    def value(self) -> np.ndarray:
        return self.data

    @property
    def gradient(self) -> Optional[np.ndarray]:
        return self.grad

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        return f"Parameter({self.name!r}, shape={self.shape})"
