"""Dense float64 tensors with reverse-mode automatic differentiation.

A ``Tensor`` wraps a numpy array and records, for every operation, the
parent tensors and a closure that pushes gradients backwards.  Nodes carry
a monotonically increasing creation id; ``backward()`` visits the reachable
graph in exact reverse construction order, which is a valid topological
order by construction.  Gradients accumulate additively across fan-out.

All arithmetic is 64-bit.  Broadcasting is supported where the model needs
it (bias rows, batched attention); gradients of broadcast operands are
sum-reduced back to the operand's shape.
"""

from __future__ import annotations

import math
from contextlib import contextmanager

import numpy as np

from .errors import DimensionError

_node_counter = 0
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (forward-only evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_id")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None
        global _node_counter
        _node_counter += 1
        self._id = _node_counter

    @classmethod
    def _make(cls, data, parents, backward_fn):
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        needs = _grad_enabled and any(p.requires_grad for p in parents)
        out.requires_grad = needs
        out._parents = parents if needs else ()
        out._backward = backward_fn if needs else None
        global _node_counter
        _node_counter += 1
        out._id = _node_counter
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        """Backpropagate from this (scalar or full-shape seed) tensor."""
        if not self.requires_grad:
            raise RuntimeError("backward() on a tensor that does not require grad")
        self.grad = np.ones_like(self.data)
        # Reachable subgraph, visited in reverse creation order.
        nodes = []
        seen = {id(self)}
        stack = [self]
        while stack:
            node = stack.pop()
            nodes.append(node)
            for p in node._parents:
                if id(p) not in seen:
                    seen.add(id(p))
                    stack.append(p)
        nodes.sort(key=lambda n: n._id, reverse=True)
        for node in nodes:
            if node._backward is not None:
                node._backward(node.grad)

    # -- operator sugar ----------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, scale(other, -1.0))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _accum(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _reduce_to(grad, shape):
    """Sum-reduce a broadcast gradient back to the operand's shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- arithmetic -------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    data = a.data + b.data

    def backward(g):
        _accum(a, _reduce_to(g, a.data.shape))
        _accum(b, _reduce_to(g, b.data.shape))

    return Tensor._make(data, (a, b), backward)


def mul(a: Tensor, b: Tensor) -> Tensor:
    data = a.data * b.data

    def backward(g):
        _accum(a, _reduce_to(g * b.data, a.data.shape))
        _accum(b, _reduce_to(g * a.data, b.data.shape))

    return Tensor._make(data, (a, b), backward)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    data = a.data * c

    def backward(g):
        _accum(a, g * c)

    return Tensor._make(data, (a,), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape[-1] != b.data.shape[-2 if b.data.ndim > 1 else 0]:
        raise DimensionError(
            f"matmul inner dimensions disagree: {a.data.shape} x {b.data.shape}"
        )
    data = np.matmul(a.data, b.data)

    def backward(g):
        if a.requires_grad:
            ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
            _accum(a, _reduce_to(ga, a.data.shape))
        if b.requires_grad:
            if b.data.ndim == 2 and g.ndim > 2:
                # shared right operand: one gemm over flattened batch rows
                k = a.data.shape[-1]
                n = g.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, n)
            else:
                gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
                gb = _reduce_to(gb, b.data.shape)
            _accum(b, gb)

    return Tensor._make(data, (a, b), backward)


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.data.ndim)))
    data = np.transpose(a.data, axes)
    inverse = np.argsort(axes)

    def backward(g):
        _accum(a, np.transpose(g, inverse))

    return Tensor._make(data, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        _accum(a, g.reshape(a.data.shape))

    return Tensor._make(data, (a,), backward)


def concat(tensors, axis=0) -> Tensor:
    tensors = tuple(tensors)
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, offsets, axis=axis)):
            _accum(t, piece)

    return Tensor._make(data, tensors, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis`` starting at ``start``."""
    index = [slice(None)] * a.data.ndim
    index[axis] = slice(start, start + length)
    index = tuple(index)
    data = a.data[index]

    def backward(g):
        if a.requires_grad:
            full = np.zeros_like(a.data)
            full[index] = g
            _accum(a, full)

    return Tensor._make(data, (a,), backward)


def embedding_lookup(table: Tensor, ids) -> Tensor:
    """Rows of ``table`` selected by an integer id array (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            full = np.zeros_like(table.data)
            np.add.at(full, ids, g)
            _accum(table, full)

    return Tensor._make(data, (table,), backward)


def expand_batch(a: Tensor, n: int) -> Tensor:
    """Repeat a tensor along a new leading batch axis of size ``n``."""
    data = np.broadcast_to(a.data, (n,) + a.data.shape).copy()

    def backward(g):
        _accum(a, g.sum(axis=0))

    return Tensor._make(data, (a,), backward)


# -- nonlinearities ----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0  # subgradient at exactly 0 is 0
    data = np.where(mask, a.data, 0.0)

    def backward(g):
        _accum(a, g * mask)

    return Tensor._make(data, (a,), backward)


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh form: 0.5*x*(1 + tanh(c*(x + 0.044715*x^3)))."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def backward(g):
        sech2 = 1.0 - t * t
        d_inner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        _accum(a, g * (0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner))

    return Tensor._make(data, (a,), backward)


def quick_gelu(a: Tensor) -> Tensor:
    """x * sigmoid(1.702 x), the CLIP-style MLP activation."""
    x = a.data
    s = 1.0 / (1.0 + np.exp(-1.702 * x))
    data = x * s

    def backward(g):
        _accum(a, g * (s + x * s * (1.0 - s) * 1.702))

    return Tensor._make(data, (a,), backward)


def log(a: Tensor) -> Tensor:
    data = np.log(a.data)

    def backward(g):
        _accum(a, g / a.data)

    return Tensor._make(data, (a,), backward)


# -- reductions and normalizations -------------------------------------------


def tsum(a: Tensor, axis=None, keepdims=False) -> Tensor:
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape).copy())

    return Tensor._make(np.asarray(data), (a,), backward)


def mean(a: Tensor, axis=None, keepdims=False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        count = a.data.shape[axis]
    data = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape) / count)

    return Tensor._make(np.asarray(data), (a,), backward)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax (max subtraction) along ``axis``."""
    if a.data.shape[axis] < 1:
        raise DimensionError("softmax over an empty axis")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    p = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * p).sum(axis=axis, keepdims=True)
        _accum(a, p * (g - dot))

    return Tensor._make(p, (a,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Zero-mean unit-variance normalization of the last axis, then affine."""
    d = x.data.shape[-1]
    if d == 0:
        raise DimensionError("layer_norm over an empty last dimension")
    if eps <= 0:
        raise DimensionError("layer_norm eps must be positive")
    if gamma.data.shape != (d,) or beta.data.shape != (d,):
        raise DimensionError(
            f"layer_norm affine shapes {gamma.data.shape}/{beta.data.shape} "
            f"do not match feature width {d}"
        )
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    data = xhat * gamma.data + beta.data

    def backward(g):
        if gamma.requires_grad:
            _accum(gamma, (g * xhat).reshape(-1, d).sum(axis=0))
        if beta.requires_grad:
            _accum(beta, g.reshape(-1, d).sum(axis=0))
        if x.requires_grad:
            dxhat = g * gamma.data
            m1 = dxhat.mean(axis=-1, keepdims=True)
            m2 = (dxhat * xhat).mean(axis=-1, keepdims=True)
            _accum(x, inv * (dxhat - m1 - xhat * m2))

    return Tensor._make(data, (x, gamma, beta), backward)


def l2_normalize(a: Tensor, axis: int = -1) -> Tensor:
    """Scale rows along ``axis`` to unit Euclidean norm."""
    norm = np.sqrt((a.data * a.data).sum(axis=axis, keepdims=True))
    out = a.data / norm

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(a, (g - out * dot) / norm)

    return Tensor._make(out, (a,), backward)
