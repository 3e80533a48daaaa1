"""Reverse-mode automatic differentiation over float64 numpy arrays.

Small by design: a `Tensor` wraps an ndarray, records the operations that
produced it, and `backward()` accumulates gradients into every upstream
tensor with `requires_grad`.  All arithmetic is float64 and single
threaded, so repeated runs are bit-identical.

Matmul operands must be at least 2-d (represent vectors as row matrices);
everything else broadcasts with numpy semantics.
"""

from __future__ import annotations

from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

from rmio.errors import DimensionError

_GRAD_ENABLED = True


@contextmanager
def no_grad():
    """Disable graph construction (inference / rollout fast path)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Node in the computation graph.

    `grad` is lazily allocated for intermediate nodes and permanently
    allocated (zero-filled) for `Parameter` leaves.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_is_param")

    def __init__(
        self,
        data,
        requires_grad: bool = False,
        parents: tuple = (),
        backward: Callable[[np.ndarray], None] | None = None,
    ):
        self.data = data if isinstance(data, np.ndarray) else np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward
        self._is_param = False

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        if self._is_param:
            self.grad[...] = 0.0
        else:
            self.grad = None

    def backward(self) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's grad."""
        if self.data.size != 1:
            raise DimensionError("backward() requires a scalar loss, got shape %s" % (self.shape,))
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- operator sugar -------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0) if isinstance(other, Tensor) else -np.asarray(other, dtype=np.float64))

    def __rsub__(self, other):
        return add(mul(self, -1.0), other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=np.float64))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce gradient `g` back to `shape` after numpy broadcasting."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _acc(t: Tensor, g: np.ndarray) -> None:
    if t._is_param:
        t.grad += g
    elif t.grad is None:
        t.grad = g
    else:
        t.grad = t.grad + g


def _node(data: np.ndarray, parents: tuple, backward) -> Tensor:
    return Tensor(data, requires_grad=True, parents=parents, backward=backward)


# -- primitives ----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g, a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(g, b.data.shape))
        return _node(out, (a, b), bwd)
    return Tensor(out)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(g * a.data, b.data.shape))
        return _node(out, (a, b), bwd)
    return Tensor(out)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))
        return _node(out, (a, b), bwd)
    return Tensor(out)


def power(a, p) -> Tensor:
    a = as_tensor(a)
    p = float(p)
    out = a.data ** p
    if _GRAD_ENABLED and a.requires_grad:
        def bwd(g):
            _acc(a, g * p * a.data ** (p - 1.0))
        return _node(out, (a,), bwd)
    return Tensor(out)


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(
            "matmul operands must be >= 2-d, got %s @ %s" % (a.shape, b.shape)
        )
    out = a.data @ b.data
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.data.shape))
        return _node(out, (a, b), bwd)
    return Tensor(out)


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, g * (1.0 - out * out))
        return _node(out, (x,), bwd)
    return Tensor(out)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = 1.0 / (1.0 + np.exp(-x.data))
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, g * out * (1.0 - out))
        return _node(out, (x,), bwd)
    return Tensor(out)


def relu(x) -> Tensor:
    x = as_tensor(x)
    out = np.maximum(x.data, 0.0)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, g * (x.data > 0.0))
        return _node(out, (x,), bwd)
    return Tensor(out)


def elu(x) -> Tensor:
    x = as_tensor(x)
    neg = x.data < 0.0
    out = np.where(neg, np.expm1(x.data), x.data)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, g * np.where(neg, out + 1.0, 1.0))
        return _node(out, (x,), bwd)
    return Tensor(out)


def softplus(x) -> Tensor:
    x = as_tensor(x)
    out = np.logaddexp(0.0, x.data)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, g / (1.0 + np.exp(-x.data)))
        return _node(out, (x,), bwd)
    return Tensor(out)


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, g * out)
        return _node(out, (x,), bwd)
    return Tensor(out)


def log(x) -> Tensor:
    x = as_tensor(x)
    out = np.log(x.data)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, g / x.data)
        return _node(out, (x,), bwd)
    return Tensor(out)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            gg = g
            if not keepdims and axis is not None:
                gg = np.expand_dims(g, axis)
            _acc(x, np.broadcast_to(gg, x.data.shape).copy())
        return _node(out, (x,), bwd)
    return Tensor(out)


def tmean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    out = x.data.mean(axis=axis, keepdims=keepdims)
    scale = x.data.size / out.size
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            gg = g
            if not keepdims and axis is not None:
                gg = np.expand_dims(g, axis)
            _acc(x, np.broadcast_to(gg / scale, x.data.shape).copy())
        return _node(out, (x,), bwd)
    return Tensor(out)


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, out * (g - (g * out).sum(axis=axis, keepdims=True)))
        return _node(out, (x,), bwd)
    return Tensor(out)


def log_softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, g - np.exp(out) * g.sum(axis=axis, keepdims=True))
        return _node(out, (x,), bwd)
    return Tensor(out)


def clip(x, lo: float, hi: float) -> Tensor:
    x = as_tensor(x)
    out = np.clip(x.data, lo, hi)
    if _GRAD_ENABLED and x.requires_grad:
        mask = (x.data >= lo) & (x.data <= hi)
        def bwd(g):
            _acc(x, g * mask)
        return _node(out, (x,), bwd)
    return Tensor(out)


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    take_a = a.data <= b.data
    out = np.where(take_a, a.data, b.data)
    if _GRAD_ENABLED and (a.requires_grad or b.requires_grad):
        def bwd(g):
            if a.requires_grad:
                _acc(a, _unbroadcast(g * take_a, a.data.shape))
            if b.requires_grad:
                _acc(b, _unbroadcast(g * ~take_a, b.data.shape))
        return _node(out, (a, b), bwd)
    return Tensor(out)


def concatenate(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in ts], axis=axis)
    if _GRAD_ENABLED and any(t.requires_grad for t in ts):
        sizes = [t.data.shape[axis] for t in ts]
        offsets = np.cumsum(sizes)[:-1]
        def bwd(g):
            for t, piece in zip(ts, np.split(g, offsets, axis=axis)):
                if t.requires_grad:
                    _acc(t, piece)
        return _node(out, tuple(ts), bwd)
    return Tensor(out)


def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    out = x.data.reshape(shape)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, g.reshape(x.data.shape))
        return _node(out, (x,), bwd)
    return Tensor(out)


def swapaxes(x, a1: int, a2: int) -> Tensor:
    x = as_tensor(x)
    out = np.swapaxes(x.data, a1, a2)
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            _acc(x, np.swapaxes(g, a1, a2))
        return _node(out, (x,), bwd)
    return Tensor(out)


def take(x, idx) -> Tensor:
    """Basic and boolean/integer-array indexing with scatter-add backward."""
    x = as_tensor(x)
    out = x.data[idx]
    if _GRAD_ENABLED and x.requires_grad:
        def bwd(g):
            gz = np.zeros_like(x.data)
            np.add.at(gz, idx, g)
            _acc(x, gz)
        return _node(out, (x,), bwd)
    return Tensor(out)


def stop_gradient(x) -> Tensor:
    return as_tensor(x).detach()
