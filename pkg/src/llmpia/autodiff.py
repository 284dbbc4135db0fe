"""A small reverse-mode automatic differentiation tape over numpy arrays.

Only the operations needed by the attention head and the toy encoder are
provided. Every op records its parents and a closure mapping the output
gradient to one gradient per parent; :func:`backward` walks the graph in
reverse topological order.

All values are float64. Leaves created with ``requires_grad=True`` wrap the
caller's array without copying, so an optimizer can update parameters in
place between steps.
"""

from __future__ import annotations

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward")
    # make ``ndarray <op> Tensor`` defer to the Tensor's reflected operator
    __array_ufunc__ = None

    def __init__(self, value, requires_grad=False, parents=(), backward=None):
        arr = np.asarray(value)
        if arr.dtype != np.float64:
            arr = arr.astype(np.float64)
        self.value = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

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
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents, backward):
    parents = tuple(parents)
    if any(p.requires_grad for p in parents):
        return Tensor(value, True, parents, backward)
    return Tensor(value)


def _unbroadcast(grad, shape):
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def backward(root: Tensor, grad=None) -> None:
    """Accumulate d(root)/d(leaf) into ``leaf.grad`` for every reachable leaf."""
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))

    seed = np.ones_like(root.value) if grad is None else np.asarray(grad, dtype=np.float64)
    grads = {id(root): seed}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise arithmetic -------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value + b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value - b.value, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return _node(a.value * b.value, (a, b),
                 lambda g: (_unbroadcast(g * b.value, a.shape),
                            _unbroadcast(g * a.value, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return _node(out, (a, b),
                 lambda g: (_unbroadcast(g / b.value, a.shape),
                            _unbroadcast(-g * out / b.value, b.shape)))


def neg(a):
    a = as_tensor(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a):
    a = as_tensor(a)
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a):
    a = as_tensor(a)
    pos = a.value > 0
    return _node(np.where(pos, a.value, 0.0), (a,), lambda g: (g * pos,))


def harmonic_mean(a, b, eps=1e-8):
    """Elementwise 2ab / (a + b + eps*sign(a+b)); zero wherever |a+b| < eps."""
    a, b = as_tensor(a), as_tensor(b)
    s = a.value + b.value
    guard = np.abs(s) < eps
    den = np.where(guard, 1.0, s + eps * np.sign(s))
    out = np.where(guard, 0.0, 2.0 * a.value * b.value / den)

    def bw(g):
        den2 = den * den
        ga = np.where(guard, 0.0, 2.0 * b.value * (den - a.value) / den2)
        gb = np.where(guard, 0.0, 2.0 * a.value * (den - b.value) / den2)
        return _unbroadcast(g * ga, a.shape), _unbroadcast(g * gb, b.shape)

    return _node(out, (a, b), bw)


# -- reductions and shape ops -----------------------------------------------

def sum(a, axis=None, keepdims=False):  # noqa: A001 - mirrors numpy naming
    a = as_tensor(a)
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw)


def mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    if axis is None:
        count = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum(a, axis=axis, keepdims=keepdims) * (1.0 / count)


def reshape(a, shape):
    a = as_tensor(a)
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return _node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inverse),))


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def bw(g):
        ga = g @ np.swapaxes(b.value, -1, -2)
        gb = np.swapaxes(a.value, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(a.value @ b.value, (a, b), bw)


def take_rows(table, idx):
    """``table[idx]`` along axis 0; gradients scatter-add back into the table."""
    table = as_tensor(table)
    idx = np.asarray(idx)

    def bw(g):
        out = np.zeros_like(table.value)
        np.add.at(out, idx, g)
        return (out,)

    return _node(table.value[idx], (table,), bw)


def masked_max(a, mask, axis):
    """Max over ``axis`` considering only entries where ``mask`` is true."""
    a = as_tensor(a)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), a.shape)
    filled = np.where(mask, a.value, -np.inf)
    arg = np.expand_dims(np.argmax(filled, axis=axis), axis)
    out = np.take_along_axis(a.value, arg, axis=axis).squeeze(axis)

    def bw(g):
        grad = np.zeros_like(a.value)
        np.put_along_axis(grad, arg, np.expand_dims(g, axis), axis=axis)
        return (grad,)

    return _node(out, (a,), bw)


def masked_softmax(a, mask=None, axis=-1):
    """Softmax along ``axis``; entries with mask false get probability zero."""
    a = as_tensor(a)
    x = a.value
    if mask is not None:
        mask = np.broadcast_to(np.asarray(mask, dtype=bool), x.shape)
        x = np.where(mask, x, -np.inf)
    shift = np.max(x, axis=axis, keepdims=True)
    e = np.exp(x - shift)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _node(out, (a,), bw)


def softmax(a, axis=-1):
    return masked_softmax(a, None, axis)


def log_softmax(a, axis=-1):
    a = as_tensor(a)
    shift = a.value.max(axis=axis, keepdims=True)
    lse = shift + np.log(np.exp(a.value - shift).sum(axis=axis, keepdims=True))
    out = a.value - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _node(out, (a,), bw)


# -- composites ---------------------------------------------------------------

def layer_norm(x, gain, bias, eps=1e-5):
    mu = mean(x, axis=-1, keepdims=True)
    xc = x - mu
    var = mean(xc * xc, axis=-1, keepdims=True)
    return xc / sqrt(var + eps) * gain + bias


def l2_normalize(x, axis=-1):
    x = as_tensor(x)
    return x / sqrt(sum(x * x, axis=axis, keepdims=True))


def nll_of_targets(logits, targets):
    """Mean over rows of -log softmax(logits)[row, target]."""
    logits = as_tensor(logits)
    targets = np.asarray(targets)
    onehot = np.zeros(logits.shape)
    onehot[np.arange(len(targets)), targets] = 1.0
    return -sum(log_softmax(logits, axis=-1) * onehot) * (1.0 / len(targets))
