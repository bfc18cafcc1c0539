"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tensor`` wraps a numpy array plus the bookkeeping needed for backward:
its parents and a closure computing parent gradients from the output
gradient. Creation order doubles as the tape: every tensor gets a sequence
number, and ``backward`` walks the ancestors of the loss in exact reverse
creation order, accumulating gradients additively at shared nodes.

Everything is double precision and single threaded; ``no_grad()`` switches
off tape recording for inference paths.
"""

import itertools

import numpy as np

from . import kernels


class NonFiniteError(ValueError):
    """An elementwise operation received NaN or infinite input."""


class ShapeError(ValueError):
    """Operands have inconsistent shapes for the requested operation."""


_grad_enabled = True
_counter = itertools.count()


class no_grad:
    """Context manager disabling tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._prev = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._prev
        return False


class Tensor:
    __slots__ = ("data", "grad", "_parents", "_bw", "_seq")

    def __init__(self, data, parents=(), bw=None):
        if not isinstance(data, np.ndarray) or data.dtype != np.float64:
            data = np.asarray(data, dtype=np.float64)
        self.data = data
        self.grad = None
        if _grad_enabled:
            self._parents = parents
            self._bw = bw
        else:
            self._parents = ()
            self._bw = None
        self._seq = next(_counter)

    @property
    def shape(self):
        return self.data.shape

    def item(self):
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape})"

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


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _out(data, parents, bw):
    if _grad_enabled:
        return Tensor(data, parents, bw)
    return Tensor(data)


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# -------------------------------------------------------------- arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(g, b.data.shape)

    return _out(data, (a, b), bw)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bw(g):
        return _unbroadcast(g, a.data.shape), _unbroadcast(-g, b.data.shape)

    return _out(data, (a, b), bw)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bw(g):
        return (_unbroadcast(g * b.data, a.data.shape),
                _unbroadcast(g * a.data, b.data.shape))

    return _out(data, (a, b), bw)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.data.shape),
                _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _out(data, (a, b), bw)


def neg(a):
    a = as_tensor(a)

    def bw(g):
        return (-g,)

    return _out(-a.data, (a,), bw)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim > 2 or bd.ndim > 2:
        raise ShapeError("matmul supports 1-D and 2-D operands only")
    try:
        data = ad @ bd
    except ValueError as exc:
        raise ShapeError(f"matmul shape mismatch: {ad.shape} @ {bd.shape}") from exc

    if ad.ndim == 2 and bd.ndim == 2:
        def bw(g):
            return g @ bd.T, ad.T @ g
    elif ad.ndim == 2 and bd.ndim == 1:
        def bw(g):
            return np.outer(g, bd), ad.T @ g
    elif ad.ndim == 1 and bd.ndim == 2:
        def bw(g):
            return bd @ g, np.outer(ad, g)
    else:  # 1-D dot 1-D
        def bw(g):
            return g * bd, g * ad

    return _out(data, (a, b), bw)


def dot(a, b):
    return matmul(a, b)


# -------------------------------------------------------------- reductions

def tsum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.data.shape).copy(),)
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, a.data.shape).copy(),)

    return _out(data, (a,), bw)


def tmean(a, axis=None):
    a = as_tensor(a)
    n = a.data.size if axis is None else a.data.shape[axis]
    return mul(tsum(a, axis=axis), 1.0 / n)


# ----------------------------------------------------- indexing / reshaping

def take(a, idx, axis=0):
    """Select rows (or elements for 1-D input) by integer index array."""
    a = as_tensor(a)
    idx = np.asarray(idx, dtype=np.intp)
    data = np.take(a.data, idx, axis=axis)

    def bw(g):
        acc = np.zeros_like(a.data)
        if axis == 0:
            np.add.at(acc, idx, g)
        else:
            raise ShapeError("take backward implemented for axis=0 only")
        return (acc,)

    return _out(data, (a,), bw)


def index_add(values, idx, size):
    """Scatter-add a 1-D value vector into a zero vector of length ``size``."""
    values = as_tensor(values)
    idx = np.asarray(idx, dtype=np.intp)
    data = np.zeros(size, dtype=np.float64)
    np.add.at(data, idx, values.data)

    def bw(g):
        return (g[idx],)

    return _out(data, (values,), bw)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bw(g):
        return tuple(
            np.take(g, np.arange(offsets[i], offsets[i + 1]), axis=axis)
            for i in range(len(tensors))
        )

    return _out(data, tuple(tensors), bw)


def stack_rows(tensors):
    """Stack equal-length 1-D tensors into a 2-D matrix, one per row."""
    tensors = [as_tensor(t) for t in tensors]
    data = np.stack([t.data for t in tensors], axis=0)

    def bw(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _out(data, tuple(tensors), bw)


def reshape(a, shape):
    a = as_tensor(a)
    data = a.data.reshape(shape)

    def bw(g):
        return (g.reshape(a.data.shape),)

    return _out(data, (a,), bw)


def transpose(a):
    a = as_tensor(a)

    def bw(g):
        return (g.T,)

    return _out(a.data.T, (a,), bw)


# -------------------------------------------------------------- elementwise

def _check_finite(name, data):
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{name}: input contains NaN or infinite values")


def _ew(fn, *arrays):
    """Apply an elementwise kernel, lifting 0-d arrays to 1-d and back."""
    if arrays[0].ndim == 0:
        return fn(*[a.reshape(1) for a in arrays]).reshape(())
    return fn(*arrays)


def tanh(a):
    a = as_tensor(a)
    _check_finite("tanh", a.data)
    y = _ew(kernels.tanh, a.data)

    def bw(g):
        return (_ew(kernels.tanh_grad, g, y),)

    return _out(y, (a,), bw)


def sigmoid(a):
    a = as_tensor(a)
    _check_finite("sigmoid", a.data)
    y = _ew(kernels.sigmoid, a.data)

    def bw(g):
        return (_ew(kernels.sigmoid_grad, g, y),)

    return _out(y, (a,), bw)


def leaky_relu(a, alpha=0.2):
    a = as_tensor(a)
    _check_finite("leaky_relu", a.data)
    xd = a.data
    if xd.ndim == 0:
        y = kernels.leaky_relu(xd.reshape(1), alpha).reshape(())

        def bw(g):
            return (kernels.leaky_relu_grad(g.reshape(1), xd.reshape(1), alpha).reshape(()),)
    else:
        y = kernels.leaky_relu(xd, alpha)

        def bw(g):
            return (kernels.leaky_relu_grad(g, xd, alpha),)

    return _out(y, (a,), bw)


def relu(a):
    a = as_tensor(a)
    xd = a.data
    y = _ew(kernels.relu, xd)

    def bw(g):
        return (_ew(kernels.relu_grad, g, xd),)

    return _out(y, (a,), bw)


def softmax(a):
    """Softmax over the last axis (1-D or 2-D input), max-subtracted."""
    a = as_tensor(a)
    _check_finite("softmax", a.data)
    if a.data.ndim == 1:
        y2 = kernels.softmax_rows(a.data.reshape(1, -1))
        y = y2.reshape(-1)

        def bw(g):
            gg = kernels.softmax_rows_grad(g.reshape(1, -1), y2)
            return (gg.reshape(-1),)

        return _out(y, (a,), bw)
    if a.data.ndim == 2:
        y = kernels.softmax_rows(np.ascontiguousarray(a.data))

        def bw(g):
            return (kernels.softmax_rows_grad(np.ascontiguousarray(g), y),)

        return _out(y, (a,), bw)
    raise ShapeError("softmax supports 1-D and 2-D input")


def texp(a):
    a = as_tensor(a)
    y = np.exp(a.data)

    def bw(g):
        return (g * y,)

    return _out(y, (a,), bw)


def tlog(a):
    a = as_tensor(a)
    y = np.log(a.data)
    xd = a.data

    def bw(g):
        return (g / xd,)

    return _out(y, (a,), bw)


def tsqrt(a):
    a = as_tensor(a)
    y = np.sqrt(a.data)

    def bw(g):
        return (g * 0.5 / y,)

    return _out(y, (a,), bw)


def minimum(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = np.minimum(a.data, b.data)
    ad, bd = a.data, b.data

    def bw(g):
        ga, gb = kernels.minimum_grad(np.asarray(g, dtype=np.float64), ad, bd)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return _out(data, (a, b), bw)


def l2norm(a):
    a = as_tensor(a)
    return tsqrt(tsum(mul(a, a)))


# ----------------------------------------------------------------- backward

def backward(root):
    """Backpropagate from a scalar tensor through its ancestor graph."""
    root = as_tensor(root)
    if root.data.shape != ():
        raise ShapeError(f"backward root must be scalar, got shape {root.data.shape}")
    seen = {id(root): root}
    stack = [root]
    while stack:
        t = stack.pop()
        for p in t._parents:
            if id(p) not in seen:
                seen[id(p)] = p
                stack.append(p)
    order = sorted(seen.values(), key=lambda t: t._seq, reverse=True)
    root.grad = np.ones((), dtype=np.float64)
    for t in order:
        if t._bw is None or t.grad is None:
            continue
        for p, g in zip(t._parents, t._bw(t.grad)):
            if g is None:
                continue
            p.grad = g if p.grad is None else p.grad + g


def gradients(loss, params):
    """Gradient of a scalar loss for each parameter tensor.

    Parameters not reached by the backward pass get an exact zero array.
    Existing ``grad`` buffers on the parameters are discarded first.
    """
    for p in params:
        p.grad = None
    backward(loss)
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
