"""Dual-backend numeric kernels.

The elementwise activations, softmax rows, and the fused Adam update are the
hot inner loops of training. Each kernel exists twice: a numba ``@njit``
version and a pure-numpy version. The active backend is chosen at import time:

* ``KGWRITER_BACKEND=numpy``  force the numpy path
* ``KGWRITER_BACKEND=numba``  force numba (ImportError if numba is missing)
* unset                        numba when importable, numpy otherwise

``BACKEND`` reports which path won. ``numpy_impls()`` / ``numba_impls()``
expose both tables so the benchmark in ``benchmarks/bench_kernels.py`` can
time them side by side. All kernels take and return float64 arrays.
"""

import os

import numpy as np

_ENV_VAR = "KGWRITER_BACKEND"


# ---------------------------------------------------------------- numpy path

def _np_sigmoid(x):
    out = np.empty_like(x)
    pos = x >= 0.0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _np_sigmoid_grad(gy, y):
    return gy * y * (1.0 - y)


def _np_tanh(x):
    return np.tanh(x)


def _np_tanh_grad(gy, y):
    return gy * (1.0 - y * y)


def _np_leaky_relu(x, alpha):
    return np.where(x >= 0.0, x, alpha * x)


def _np_leaky_relu_grad(gy, x, alpha):
    return np.where(x >= 0.0, gy, alpha * gy)


def _np_relu(x):
    return np.maximum(x, 0.0)


def _np_relu_grad(gy, x):
    return np.where(x > 0.0, gy, 0.0)


def _np_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    e = np.exp(x - m)
    return e / e.sum(axis=1, keepdims=True)


def _np_softmax_rows_grad(gy, y):
    inner = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - inner)


def _np_minimum_grad(gy, a, b):
    # Ties split evenly so the subgradient matches the symmetric difference.
    ga = np.where(a < b, gy, np.where(a == b, 0.5 * gy, 0.0))
    gb = np.where(b < a, gy, np.where(a == b, 0.5 * gy, 0.0))
    return ga, gb


def _np_adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * g * g
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


_NUMPY = {
    "sigmoid": _np_sigmoid,
    "sigmoid_grad": _np_sigmoid_grad,
    "tanh": _np_tanh,
    "tanh_grad": _np_tanh_grad,
    "leaky_relu": _np_leaky_relu,
    "leaky_relu_grad": _np_leaky_relu_grad,
    "relu": _np_relu,
    "relu_grad": _np_relu_grad,
    "softmax_rows": _np_softmax_rows,
    "softmax_rows_grad": _np_softmax_rows_grad,
    "minimum_grad": _np_minimum_grad,
    "adam_update": _np_adam_update,
}


# ---------------------------------------------------------------- numba path

def _build_numba():
    import math

    from numba import njit

    @njit(cache=True)
    def nb_sigmoid(x):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            xv = flat[i]
            if xv >= 0.0:
                out[i] = 1.0 / (1.0 + math.exp(-xv))
            else:
                e = math.exp(xv)
                out[i] = e / (1.0 + e)
        return out.reshape(x.shape)

    @njit(cache=True)
    def nb_sigmoid_grad(gy, y):
        g = gy.ravel()
        yf = y.ravel()
        out = np.empty_like(g)
        for i in range(g.size):
            out[i] = g[i] * yf[i] * (1.0 - yf[i])
        return out.reshape(gy.shape)

    # numpy's vectorized tanh beats a jit scalar loop at every size used
    # here (see benchmarks/bench_kernels.py), so the forward stays numpy
    nb_tanh = _np_tanh

    @njit(cache=True)
    def nb_tanh_grad(gy, y):
        g = gy.ravel()
        yf = y.ravel()
        out = np.empty_like(g)
        for i in range(g.size):
            out[i] = g[i] * (1.0 - yf[i] * yf[i])
        return out.reshape(gy.shape)

    @njit(cache=True)
    def nb_leaky_relu(x, alpha):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            xv = flat[i]
            out[i] = xv if xv >= 0.0 else alpha * xv
        return out.reshape(x.shape)

    @njit(cache=True)
    def nb_leaky_relu_grad(gy, x, alpha):
        g = gy.ravel()
        xf = x.ravel()
        out = np.empty_like(g)
        for i in range(g.size):
            out[i] = g[i] if xf[i] >= 0.0 else alpha * g[i]
        return out.reshape(gy.shape)

    @njit(cache=True)
    def nb_relu(x):
        flat = x.ravel()
        out = np.empty_like(flat)
        for i in range(flat.size):
            xv = flat[i]
            out[i] = xv if xv > 0.0 else 0.0
        return out.reshape(x.shape)

    @njit(cache=True)
    def nb_relu_grad(gy, x):
        g = gy.ravel()
        xf = x.ravel()
        out = np.empty_like(g)
        for i in range(g.size):
            out[i] = g[i] if xf[i] > 0.0 else 0.0
        return out.reshape(gy.shape)

    @njit(cache=True)
    def nb_softmax_rows(x):
        rows, cols = x.shape
        out = np.empty_like(x)
        for r in range(rows):
            m = x[r, 0]
            for c in range(1, cols):
                if x[r, c] > m:
                    m = x[r, c]
            s = 0.0
            for c in range(cols):
                e = math.exp(x[r, c] - m)
                out[r, c] = e
                s += e
            for c in range(cols):
                out[r, c] /= s
        return out

    @njit(cache=True)
    def nb_softmax_rows_grad(gy, y):
        rows, cols = y.shape
        out = np.empty_like(y)
        for r in range(rows):
            inner = 0.0
            for c in range(cols):
                inner += gy[r, c] * y[r, c]
            for c in range(cols):
                out[r, c] = y[r, c] * (gy[r, c] - inner)
        return out

    @njit(cache=True)
    def nb_minimum_grad(gy, a, b):
        g = gy.ravel()
        af = a.ravel()
        bf = b.ravel()
        ga = np.zeros_like(g)
        gb = np.zeros_like(g)
        for i in range(g.size):
            if af[i] < bf[i]:
                ga[i] = g[i]
            elif bf[i] < af[i]:
                gb[i] = g[i]
            else:
                ga[i] = 0.5 * g[i]
                gb[i] = 0.5 * g[i]
        return ga.reshape(gy.shape), gb.reshape(gy.shape)

    @njit(cache=True)
    def nb_adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
        pf = p.ravel()
        gf = g.ravel()
        mf = m.ravel()
        vf = v.ravel()
        c1 = 1.0 - beta1 ** t
        c2 = 1.0 - beta2 ** t
        for i in range(pf.size):
            mf[i] = beta1 * mf[i] + (1.0 - beta1) * gf[i]
            vf[i] = beta2 * vf[i] + (1.0 - beta2) * gf[i] * gf[i]
            pf[i] -= lr * (mf[i] / c1) / (math.sqrt(vf[i] / c2) + eps)

    return {
        "sigmoid": nb_sigmoid,
        "sigmoid_grad": nb_sigmoid_grad,
        "tanh": nb_tanh,
        "tanh_grad": nb_tanh_grad,
        "leaky_relu": nb_leaky_relu,
        "leaky_relu_grad": nb_leaky_relu_grad,
        "relu": nb_relu,
        "relu_grad": nb_relu_grad,
        "softmax_rows": nb_softmax_rows,
        "softmax_rows_grad": nb_softmax_rows_grad,
        "minimum_grad": nb_minimum_grad,
        "adam_update": nb_adam_update,
    }


_NUMBA = None


def numpy_impls():
    return dict(_NUMPY)


def numba_impls():
    """Build (once) and return the numba kernel table."""
    global _NUMBA
    if _NUMBA is None:
        _NUMBA = _build_numba()
    return dict(_NUMBA)


def _select():
    choice = os.environ.get(_ENV_VAR, "").strip().lower()
    if choice == "numpy":
        return "numpy", _NUMPY
    if choice == "numba":
        return "numba", numba_impls()
    if choice not in ("", "auto"):
        raise ValueError(f"unknown {_ENV_VAR} value: {choice!r} (use numpy or numba)")
    try:
        return "numba", numba_impls()
    except ImportError:
        return "numpy", _NUMPY


BACKEND, _ACTIVE = _select()

sigmoid = _ACTIVE["sigmoid"]
sigmoid_grad = _ACTIVE["sigmoid_grad"]
tanh = _ACTIVE["tanh"]
tanh_grad = _ACTIVE["tanh_grad"]
leaky_relu = _ACTIVE["leaky_relu"]
leaky_relu_grad = _ACTIVE["leaky_relu_grad"]
relu = _ACTIVE["relu"]
relu_grad = _ACTIVE["relu_grad"]
softmax_rows = _ACTIVE["softmax_rows"]
softmax_rows_grad = _ACTIVE["softmax_rows_grad"]
minimum_grad = _ACTIVE["minimum_grad"]
adam_update = _ACTIVE["adam_update"]
