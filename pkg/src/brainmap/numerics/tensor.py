"""Reverse-mode differentiation over a dynamically recorded graph.

Every operation on a :class:`Tensor` records its parents together with a
closure mapping the output adjoint to parent adjoints. :func:`backward`
walks the recorded graph in reverse topological order.
"""

from __future__ import annotations

import contextlib
import threading

import numpy as np

from ..errors import ContractError, ShapeError

_state = threading.local()


def _recording() -> bool:
    return getattr(_state, "enabled", True)


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    prev = _recording()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A float64 array that can take part in a recorded computation."""

    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, value, requires_grad=False, name=None, _parents=(), _backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = _parents
        self._backward = _backward
        self.name = name

    def __repr__(self):
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.value

    def zero_grad(self):
        self.grad = None

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __pow__(self, p):
        return power(self, p)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value, parents, backward_fn) -> Tensor:
    parents = tuple(parents)
    if _recording() and any(p.requires_grad for p in parents):
        return Tensor(value, requires_grad=True, _parents=parents, _backward=backward_fn)
    return Tensor(value)


def parameter(value, name=None) -> Tensor:
    """A trainable leaf."""
    return Tensor(np.array(value, dtype=np.float64), requires_grad=True, name=name)


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return _make(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, sa), _unbroadcast(-g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    ra, rb = a.requires_grad, b.requires_grad
    return _make(av * bv, (a, b),
                 lambda g: (_unbroadcast(g * bv, av.shape) if ra else None,
                            _unbroadcast(g * av, bv.shape) if rb else None))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    out = av / bv
    ra, rb = a.requires_grad, b.requires_grad
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / bv, av.shape) if ra else None,
                            _unbroadcast(-g * out / bv, bv.shape) if rb else None))


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(av ** p, (a,), lambda g: (g * p * av ** (p - 1),))


def absolute(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.value)
    return _make(np.abs(a.value), (a,), lambda g: (g * sign,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.value)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    av = a.value
    return _make(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = stable_sigmoid(a.value)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _make(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = as_tensor(a)
    pos = a.value > 0
    return _make(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def stable_sigmoid(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# ---------------------------------------------------------------- structural

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    av, bv = a.value, b.value
    if av.ndim < 2 or bv.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {av.shape} and {bv.shape}")
    if av.shape[-1] != bv.shape[-2]:
        raise ShapeError(f"matmul dimension mismatch: {av.shape} x {bv.shape}")

    ra, rb = a.requires_grad, b.requires_grad

    def back(g):
        ga = gb = None
        if ra:
            ga = _unbroadcast(g @ np.swapaxes(bv, -1, -2), av.shape)
        if rb:
            if bv.ndim == 2 and av.ndim > 2:
                # shared weight: fold the batch axes into rows
                gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.swapaxes(av, -1, -2) @ g, bv.shape)
        return ga, gb

    return _make(av @ bv, (a, b), back)


def transpose(a) -> Tensor:
    """Swap the last two axes."""
    a = as_tensor(a)
    return _make(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    return _make(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _make(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    n = a.value.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return tsum(a, axis=axis, keepdims=keepdims) * (1.0 / n)


def tmax(a, axis, keepdims=False) -> Tensor:
    """Max over one axis; ties split the adjoint evenly."""
    a = as_tensor(a)
    av = a.value
    out = av.max(axis=axis, keepdims=True)
    hit = av == out
    share = hit / hit.sum(axis=axis, keepdims=True)

    def back(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (g * share,)

    return _make(out if keepdims else np.squeeze(out, axis=axis), (a,), back)


def concat(tensors, axis=-1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in ts]
    cuts = np.cumsum(sizes)[:-1]

    def back(g):
        return tuple(np.split(g, cuts, axis=axis))

    return _make(np.concatenate([t.value for t in ts], axis=axis), ts, back)


def take(a, indices, axis=-1) -> Tensor:
    """Select entries along ``axis`` (no repeated indices)."""
    a = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    shape = a.shape

    def back(g):
        full = np.zeros(shape)
        sl = [slice(None)] * len(shape)
        sl[axis] = idx
        full[tuple(sl)] = g
        return (full,)

    return _make(np.take(a.value, idx, axis=axis), (a,), back)


# ---------------------------------------------------------------- fused ops

def softmax(a, axis=-1) -> Tensor:
    a = as_tensor(a)
    out = softmax_array(a.value, axis=axis)

    def back(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (a,), back)


def softmax_array(x: np.ndarray, axis=-1) -> np.ndarray:
    shifted = x - x.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def cross_entropy(logits, labels) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under row-softmax."""
    logits = as_tensor(logits)
    z = logits.value
    y = np.asarray(labels, dtype=np.intp)
    if z.ndim != 2 or z.shape[0] != y.shape[0]:
        raise ShapeError(f"logits {z.shape} incompatible with labels {y.shape}")
    shifted = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(len(y))
    loss = float(np.mean(lse - shifted[rows, y]))

    def back(g):
        p = softmax_array(z, axis=1)
        p[rows, y] -= 1.0
        return (g * p / len(y),)

    return _make(np.array(loss), (logits,), back)


# ---------------------------------------------------------------- backward

def backward(loss: Tensor, leaves=None):
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every reachable leaf.

    Returns the gradients for ``leaves`` (zeros for leaves the loss does not
    depend on) when given, else ``None``.
    """
    if loss.value.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))

    adj = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if not p.requires_grad or pg is None:
                continue
            key = id(p)
            adj[key] = pg if key not in adj else adj[key] + pg

    if leaves is None:
        return None
    return [np.zeros_like(t.value) if t.grad is None else t.grad for t in leaves]
