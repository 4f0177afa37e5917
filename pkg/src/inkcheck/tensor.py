"""Dense float64 tensors with tape-free reverse-mode differentiation.

Every operation that touches a tensor with ``requires_grad`` records its
parents and a closure that pushes the output gradient back into them.
Operations on tensors that do not require gradients record nothing, which
is how inference and frozen sub-networks avoid building a graph.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64


class ShapeError(ValueError):
    """Operand shapes are inconsistent with the operation."""


class NumericError(FloatingPointError):
    """A non-finite value appeared during the backward pass."""


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "_owned")

    def __init__(self, data, requires_grad: bool = False, _parents: tuple = (), op: str = "leaf"):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = op
        self._parents = _parents
        self._backward: Callable[[], None] | None = None
        self._owned = False

    # -- introspection ---------------------------------------------------
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
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    def __len__(self) -> int:
        return len(self.data)

    # -- gradient plumbing -----------------------------------------------
    def _accum(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g
            self._owned = False
        elif self._owned:
            self.grad += g
        else:
            self.grad = self.grad + g
            self._owned = True

    def _accum_at(self, index, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
            self._owned = True
        elif not self._owned:
            self.grad = self.grad.copy()
            self._owned = True
        if _is_fancy(index):
            np.add.at(self.grad, index, g)
        else:
            self.grad[index] += g

    def zero_grad(self) -> None:
        self.grad = None
        self._owned = False

    def backward(self, grad: np.ndarray | float | None = None) -> None:
        """Accumulate d(self)/d(leaf) into every reachable leaf's ``grad``."""
        if not self.requires_grad:
            return
        order = _topological(self)
        for node in order:
            if node is not self and node._parents:
                node.grad = None
                node._owned = False
        seed = np.ones_like(self.data) if grad is None else np.broadcast_to(
            np.asarray(grad, dtype=DTYPE), self.shape
        ).copy()
        self.grad = seed
        self._owned = True
        for node in reversed(order):
            if node._backward is None or node.grad is None:
                continue
            if not np.all(np.isfinite(node.grad)):
                raise NumericError(f"non-finite gradient flowing out of {node.op!r}")
            node._backward()

    # -- arithmetic --------------------------------------------------------
    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = _node(self.data + other.data, (self, other), "add")
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad, self.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(out.grad, other.shape))
            out._backward = _bw
        return out

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        out = _node(-self.data, (self,), "neg")
        if out.requires_grad:
            out._backward = lambda: self._accum(-out.grad)
        return out

    def __sub__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = _node(self.data - other.data, (self, other), "sub")
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad, self.shape))
                if other.requires_grad:
                    other._accum(-_unbroadcast(out.grad, other.shape))
            out._backward = _bw
        return out

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) - self

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = _node(self.data * other.data, (self, other), "mul")
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad * other.data, self.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(out.grad * self.data, other.shape))
            out._backward = _bw
        return out

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Tensor":
        other = as_tensor(other)
        out = _node(self.data / other.data, (self, other), "div")
        if out.requires_grad:
            def _bw():
                if self.requires_grad:
                    self._accum(_unbroadcast(out.grad / other.data, self.shape))
                if other.requires_grad:
                    other._accum(_unbroadcast(-out.grad * self.data / other.data**2, other.shape))
            out._backward = _bw
        return out

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)
        a, b = self.data, other.data
        if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
            raise ShapeError(f"matmul: cannot contract {a.shape} with {b.shape}")
        out = _node(a @ b, (self, other), "matmul")
        if out.requires_grad:
            def _bw():
                g = out.grad
                if self.requires_grad:
                    self._accum(g @ b.T)
                if other.requires_grad:
                    if a.ndim == 1:
                        other._accum(np.outer(a, g))
                    else:
                        other._accum(a.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1]))
            out._backward = _bw
        return out

    # -- shape manipulation -------------------------------------------------
    def __getitem__(self, index) -> "Tensor":
        out = _node(self.data[index], (self,), "getitem")
        if out.requires_grad:
            out._backward = lambda: self._accum_at(index, out.grad)
        return out

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        out = _node(self.data.reshape(shape), (self,), "reshape")
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad.reshape(self.shape))
        return out

    def transpose(self, *axes) -> "Tensor":
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        axes = axes or tuple(reversed(range(self.ndim)))
        inverse = np.argsort(axes)
        out = _node(self.data.transpose(axes), (self,), "transpose")
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad.transpose(inverse))
        return out

    # -- reductions ------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        out = _node(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")
        if out.requires_grad:
            def _bw():
                g = out.grad
                if axis is not None and not keepdims:
                    g = np.expand_dims(g, axis)
                self._accum(np.broadcast_to(g, self.shape))
            out._backward = _bw
        return out

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- elementwise nonlinearities ---------------------------------------------
    def exp(self) -> "Tensor":
        val = np.exp(self.data)
        out = _node(val, (self,), "exp")
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad * val)
        return out

    def log(self) -> "Tensor":
        out = _node(np.log(self.data), (self,), "log")
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad / self.data)
        return out

    def tanh(self) -> "Tensor":
        val = np.tanh(self.data)
        out = _node(val, (self,), "tanh")
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad * (1.0 - val * val))
        return out

    def sigmoid(self) -> "Tensor":
        val = _sigmoid(self.data)
        out = _node(val, (self,), "sigmoid")
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad * val * (1.0 - val))
        return out

    def relu(self) -> "Tensor":
        mask = self.data > 0
        out = _node(self.data * mask, (self,), "relu")
        if out.requires_grad:
            out._backward = lambda: self._accum(out.grad * mask)
        return out


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(data) -> Tensor:
    """A trainable leaf."""
    return Tensor(np.array(data, dtype=DTYPE), requires_grad=True, op="param")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _node(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat")
    if out.requires_grad:
        bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

        def _bw():
            for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
                if t.requires_grad:
                    idx = [slice(None)] * out.grad.ndim
                    idx[axis] = slice(lo, hi)
                    t._accum(out.grad[tuple(idx)])
        out._backward = _bw
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    out = _node(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack")
    if out.requires_grad:
        def _bw():
            for i, t in enumerate(tensors):
                if t.requires_grad:
                    t._accum(np.take(out.grad, i, axis=axis))
        out._backward = _bw
    return out


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    val = shifted - lse
    out = _node(val, (x,), "log_softmax")
    if out.requires_grad:
        def _bw():
            g = out.grad
            x._accum(g - np.exp(val) * g.sum(axis=axis, keepdims=True))
        out._backward = _bw
    return out


def softmax(data: np.ndarray, axis: int = -1) -> np.ndarray:
    shifted = data - data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def no_grad_params(params: Iterable[Tensor]) -> None:
    for p in params:
        p.requires_grad = False
        p.zero_grad()


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def _node(data: np.ndarray, parents: tuple, op: str) -> Tensor:
    requires = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=requires, _parents=parents if requires else (), op=op)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _is_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


def _topological(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack_.append((p, False))
    return order
