"""Dense float64 tensors with reverse-mode automatic differentiation.

Every differentiable operation builds a graph node holding references to its
inputs and a local backward rule. ``backward`` on a scalar walks a
topologically ordered trace of that graph exactly once, accumulating
gradients additively into ``requires_grad`` leaves. Calling ``backward``
twice without ``zero_grad`` doubles leaf gradients (accumulation semantics,
tested explicitly).
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np


class ShapeError(ValueError):
    """Operand shapes are incompatible for the requested operation."""


class ContractError(ValueError):
    """An operation precondition was violated."""


_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad, shape):
    # reduce a broadcasted gradient back to the original operand shape
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for i, dim in enumerate(shape):
        if dim == 1 and grad.shape[i] != 1:
            grad = grad.sum(axis=i, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None

    # ------------------------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self):
        return float(self.data)

    def numpy(self):
        return self.data

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # ------------------------------------------------------------------
    def _accumulate(self, grad):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += grad

    @staticmethod
    def _make(data, parents, backward):
        out = Tensor(data)
        if _grad_enabled and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @staticmethod
    def _lift(x):
        return x if isinstance(x, Tensor) else Tensor(x)

    # -- arithmetic ----------------------------------------------------
    def __add__(self, other):
        other = Tensor._lift(other)
        out_data = self.data + other.data

        def bwd(g):
            return (_unbroadcast(g, self.shape), _unbroadcast(g, other.shape))

        return Tensor._make(out_data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        return Tensor._make(-self.data, (self,), lambda g: (-g,))

    def __sub__(self, other):
        return self + (-Tensor._lift(other))

    def __rsub__(self, other):
        return Tensor._lift(other) + (-self)

    def __mul__(self, other):
        other = Tensor._lift(other)
        out_data = self.data * other.data

        def bwd(g):
            return (
                _unbroadcast(g * other.data, self.shape),
                _unbroadcast(g * self.data, other.shape),
            )

        return Tensor._make(out_data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = Tensor._lift(other)
        out_data = self.data / other.data

        def bwd(g):
            return (
                _unbroadcast(g / other.data, self.shape),
                _unbroadcast(-g * self.data / (other.data ** 2), other.shape),
            )

        return Tensor._make(out_data, (self, other), bwd)

    def __rtruediv__(self, other):
        return Tensor._lift(other) / self

    def __pow__(self, exponent):
        assert isinstance(exponent, (int, float))
        out_data = self.data ** exponent

        def bwd(g):
            return (g * exponent * self.data ** (exponent - 1),)

        return Tensor._make(out_data, (self,), bwd)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- elementwise functions ----------------------------------------
    def exp(self):
        out_data = np.exp(self.data)
        return Tensor._make(out_data, (self,), lambda g: (g * out_data,))

    def log(self):
        return Tensor._make(np.log(self.data), (self,), lambda g: (g / self.data,))

    def tanh(self):
        out_data = np.tanh(self.data)
        return Tensor._make(out_data, (self,), lambda g: (g * (1.0 - out_data ** 2),))

    def sqrt(self):
        out_data = np.sqrt(self.data)
        return Tensor._make(out_data, (self,), lambda g: (g * 0.5 / out_data,))

    def abs(self):
        sign = np.sign(self.data)
        return Tensor._make(np.abs(self.data), (self,), lambda g: (g * sign,))

    def maximum(self, value):
        """Elementwise max against a scalar constant."""
        mask = (self.data >= value).astype(np.float64)
        return Tensor._make(np.maximum(self.data, value), (self,), lambda g: (g * mask,))

    def minimum(self, value):
        """Elementwise min against a scalar constant."""
        mask = (self.data <= value).astype(np.float64)
        return Tensor._make(np.minimum(self.data, value), (self,), lambda g: (g * mask,))

    # -- reductions ----------------------------------------------------
    def sum(self, axis=None, keepdims=False):
        out_data = self.data.sum(axis=axis, keepdims=keepdims)

        def bwd(g):
            if axis is None:
                return (np.full_like(self.data, 1.0) * g,)
            gg = g if keepdims else np.expand_dims(g, axis)
            return (np.broadcast_to(gg, self.data.shape).copy(),)

        return Tensor._make(out_data, (self,), bwd)

    def mean(self, axis=None, keepdims=False):
        n = self.size if axis is None else self.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    # -- shape ops -----------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return Tensor._make(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),))

    def transpose(self):
        if self.data.ndim != 2:
            raise ShapeError(f"transpose expects a 2-d tensor, got shape {self.shape}")
        return Tensor._make(self.data.T, (self,), lambda g: (g.T,))

    @property
    def T(self):
        return self.transpose()

    def __getitem__(self, idx):
        out_data = self.data[idx]

        def bwd(g):
            full = np.zeros_like(self.data)
            np.add.at(full, idx, g)
            return (full,)

        return Tensor._make(out_data, (self,), bwd)

    # -- softmax family ------------------------------------------------
    def softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        e = np.exp(shifted)
        out_data = e / e.sum(axis=axis, keepdims=True)

        def bwd(g):
            dot = (g * out_data).sum(axis=axis, keepdims=True)
            return (out_data * (g - dot),)

        return Tensor._make(out_data, (self,), bwd)

    def log_softmax(self, axis=-1):
        shifted = self.data - self.data.max(axis=axis, keepdims=True)
        lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
        out_data = shifted - lse
        soft = np.exp(out_data)

        def bwd(g):
            return (g - soft * g.sum(axis=axis, keepdims=True),)

        return Tensor._make(out_data, (self,), bwd)

    # -- autodiff driver ----------------------------------------------
    def trace(self):
        """Topologically ordered list of graph nodes ending at self."""
        order, seen = [], set()

        def visit(node):
            if id(node) in seen:
                return
            seen.add(id(node))
            for p in node._parents:
                visit(p)
            order.append(node)

        visit(self)
        return order

    def backward(self):
        if self.size != 1:
            raise ContractError(
                f"backward requires a scalar loss, got shape {self.shape}"
            )
        tape = self.trace()
        local = {id(self): np.ones_like(self.data)}
        for node in reversed(tape):
            g = local.pop(id(node), None)
            if g is None or node._backward is None:
                if g is not None and node.requires_grad and node._backward is None:
                    node._accumulate(g)
                continue
            if node.requires_grad and not node._parents:
                node._accumulate(g)
            for parent, pg in zip(node._parents, node._backward(g)):
                if not parent.requires_grad:
                    continue
                if id(parent) in local:
                    local[id(parent)] += pg
                else:
                    local[id(parent)] = pg
        # leaves with recorded rules but requires_grad were handled above;
        # plain leaves (no _backward) accumulate in the loop's first branch


def matmul(a, b):
    a, b = Tensor._lift(a), Tensor._lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        return (g @ b.data.T, a.data.T @ g)

    return Tensor._make(out_data, (a, b), bwd)


def concat(tensors, axis=0):
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._make(out_data, tensors, bwd)


def stack(tensors, axis=0):
    tensors = [Tensor._lift(t) for t in tensors]
    out_data = np.stack([t.data for t in tensors], axis=axis)

    def bwd(g):
        return tuple(np.moveaxis(g, axis, 0))

    return Tensor._make(out_data, tensors, bwd)


def softmax_attention(q, k, v, scale=None):
    """Single-head scaled dot-product attention.

    ``softmax(q k^T * scale) v`` with attention rows summing to one.
    """
    q, k, v = Tensor._lift(q), Tensor._lift(k), Tensor._lift(v)
    if q.data.ndim != 2 or k.data.ndim != 2 or v.data.ndim != 2:
        raise ShapeError("attention expects 2-d q, k, v")
    if q.shape[1] != k.shape[1]:
        raise ShapeError(f"attention: q dim {q.shape} vs k dim {k.shape}")
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"attention: k rows {k.shape} vs v rows {v.shape}")
    if scale is None:
        scale = 1.0 / math.sqrt(q.shape[1])
    if scale <= 0:
        raise ContractError(f"attention scale must be positive, got {scale}")
    logits = matmul(q, k.T) * scale
    weights = logits.softmax(axis=-1)
    return matmul(weights, v)
