"""GRU cell, parameter initialization, and the Adam optimizer.

The GRU follows the standard reset-before-candidate form:

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    c = tanh(W_c x + U_c (r * h) + b_c)
    h' = (1 - z) * h + z * c

so with all-zero parameters the gates sit at 0.5, the candidate at 0, and
the cell halves the previous state. All weights initialize uniformly in
[-0.08, 0.08] from a caller-supplied seeded generator.
"""

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import kernels
from .autodiff import ShapeError, Tensor

INIT_SCALE = 0.08


def uniform_init(rng, *shape):
    return Tensor(rng.uniform(-INIT_SCALE, INIT_SCALE, size=shape))


@dataclass
class GruParams:
    W_z: Tensor
    U_z: Tensor
    b_z: Tensor
    W_r: Tensor
    U_r: Tensor
    b_r: Tensor
    W_c: Tensor
    U_c: Tensor
    b_c: Tensor

    @property
    def input_dim(self):
        return self.W_z.data.shape[1]

    @property
    def hidden_dim(self):
        return self.W_z.data.shape[0]

    def tensors(self):
        return [self.W_z, self.U_z, self.b_z,
                self.W_r, self.U_r, self.b_r,
                self.W_c, self.U_c, self.b_c]


def init_gru(rng, input_dim, hidden_dim):
    def w():
        return uniform_init(rng, hidden_dim, input_dim)

    def u():
        return uniform_init(rng, hidden_dim, hidden_dim)

    def b():
        return uniform_init(rng, hidden_dim)

    return GruParams(w(), u(), b(), w(), u(), b(), w(), u(), b())


def gru_cell(x, h_prev, p):
    """One GRU step; output shape equals ``h_prev`` shape."""
    if x.data.shape != (p.input_dim,) or h_prev.data.shape != (p.hidden_dim,):
        raise ShapeError(
            f"gru_cell: x {x.data.shape} / h {h_prev.data.shape} inconsistent "
            f"with params (in={p.input_dim}, hidden={p.hidden_dim})")
    return gru_cell_pre(p.W_z @ x + p.b_z, p.W_r @ x + p.b_r, p.W_c @ x + p.b_c,
                        h_prev, p)


def gru_cell_pre(xz, xr, xc, h_prev, p):
    """GRU step from precomputed input-side gate pre-activations."""
    z = ad.sigmoid(xz + p.U_z @ h_prev)
    r = ad.sigmoid(xr + p.U_r @ h_prev)
    c = ad.tanh(xc + p.U_c @ (r * h_prev))
    return (1.0 - z) * h_prev + z * c


def gru_inputs(X, p):
    """Input-side gate pre-activations for a whole sequence at once.

    X is (T, input_dim); returns three (T, hidden_dim) tensors whose row t
    feeds ``gru_cell_pre`` at step t.
    """
    return (X @ ad.transpose(p.W_z) + p.b_z,
            X @ ad.transpose(p.W_r) + p.b_r,
            X @ ad.transpose(p.W_c) + p.b_c)


def gru_sequence(xs, p, h0=None):
    """Run a GRU over a list of input tensors; returns all hidden states."""
    h = h0 if h0 is not None else Tensor(np.zeros(p.hidden_dim))
    states = []
    for x in xs:
        h = gru_cell(x, h, p)
        states.append(h)
    return states


def gru_sequence_pre(gate_inputs, p, h0=None, order=None):
    """GRU over precomputed gate inputs; ``order`` selects and orders rows."""
    xz, xr, xc = gate_inputs
    steps = order if order is not None else range(xz.data.shape[0])
    h = h0 if h0 is not None else Tensor(np.zeros(p.hidden_dim))
    states = []
    for t in steps:
        h = gru_cell_pre(ad.take(xz, t), ad.take(xr, t), ad.take(xc, t), h, p)
        states.append(h)
    return states


class Adam:
    """Adam with bias correction (beta1=0.9, beta2=0.999, eps=1e-8)."""

    def __init__(self, params, lr=0.001, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads):
        self.t += 1
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            kernels.adam_update(p.data, np.asarray(g, dtype=np.float64), m, v,
                                self.lr, self.beta1, self.beta2, self.eps, self.t)
