import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgwriter import autodiff as ad
from kgwriter import nn
from kgwriter.autodiff import ShapeError, Tensor


def zero_gru(in_dim, hidden):
    rng = np.random.default_rng(0)
    p = nn.init_gru(rng, in_dim, hidden)
    for t in p.tensors():
        t.data = np.zeros_like(t.data)
    return p


def test_gru_all_zero_params_zero_state():
    p = zero_gru(2, 3)
    h = nn.gru_cell(Tensor([5.0, -1.0]), Tensor(np.zeros(3)), p)
    np.testing.assert_array_equal(h.data, np.zeros(3))


def test_gru_all_zero_params_halves_state():
    p = zero_gru(2, 3)
    v = np.array([0.8, -0.4, 0.2])
    h = nn.gru_cell(Tensor([1.0, 2.0]), Tensor(v), p)
    np.testing.assert_allclose(h.data, 0.5 * v, atol=1e-15)


def test_gru_matches_scalar_recomputation():
    """Hand-rolled scalar-by-scalar oracle for a random 3-dim cell."""
    rng = np.random.default_rng(42)
    p = nn.init_gru(rng, 2, 3)
    x = rng.uniform(-1, 1, 2)
    hp = rng.uniform(-1, 1, 3)

    def sig(v):
        return 1.0 / (1.0 + math.exp(-v))

    expected = np.zeros(3)
    W = {n: t.data for n, t in zip(
        ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_c", "U_c", "b_c"), p.tensors())}
    for i in range(3):
        z = sig(sum(W["W_z"][i][j] * x[j] for j in range(2))
                + sum(W["U_z"][i][j] * hp[j] for j in range(3)) + W["b_z"][i])
        r_gates = [sig(sum(W["W_r"][k][j] * x[j] for j in range(2))
                       + sum(W["U_r"][k][j] * hp[j] for j in range(3)) + W["b_r"][k])
                   for k in range(3)]
        c = math.tanh(sum(W["W_c"][i][j] * x[j] for j in range(2))
                      + sum(W["U_c"][i][j] * r_gates[j] * hp[j] for j in range(3))
                      + W["b_c"][i])
        expected[i] = (1 - z) * hp[i] + z * c
    out = nn.gru_cell(Tensor(x), Tensor(hp), p)
    np.testing.assert_allclose(out.data, expected, atol=1e-12)


def test_gru_dimension_mismatch_rejected():
    p = zero_gru(2, 3)
    with pytest.raises(ShapeError):
        nn.gru_cell(Tensor([1.0, 2.0, 3.0]), Tensor(np.zeros(3)), p)
    with pytest.raises(ShapeError):
        nn.gru_cell(Tensor([1.0, 2.0]), Tensor(np.zeros(4)), p)


@given(st.integers(0, 10 ** 6))
def test_gru_output_stays_in_open_unit_interval(seed):
    rng = np.random.default_rng(seed)
    p = nn.init_gru(rng, 3, 4)
    h0 = Tensor(rng.uniform(-0.999, 0.999, 4))
    x = Tensor(rng.uniform(-2, 2, 3))
    h1 = nn.gru_cell(x, h0, p)
    assert (np.abs(h1.data) < 1.0).all()


def test_gru_precomputed_inputs_match_plain_cell():
    rng = np.random.default_rng(3)
    p = nn.init_gru(rng, 3, 4)
    X = Tensor(rng.uniform(-1, 1, (5, 3)))
    plain = nn.gru_sequence([ad.take(X, i) for i in range(5)], p)
    pre = nn.gru_sequence_pre(nn.gru_inputs(X, p), p)
    for a, b in zip(plain, pre):
        np.testing.assert_allclose(a.data, b.data, atol=1e-15)


def test_adam_first_step_matches_hand_formula():
    t = Tensor(np.array([1.0, -2.0]))
    opt = nn.Adam([t], lr=0.01)
    g = np.array([0.5, -0.25])
    opt.step([g])
    # first step reduces to lr * sign-ish update: m/(1-b1) = g, sqrt(v/(1-b2)) = |g|
    expected = np.array([1.0, -2.0]) - 0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(t.data, expected, rtol=1e-9)


def test_uniform_init_range_and_determinism():
    a = nn.uniform_init(np.random.default_rng(9), 50, 20).data
    b = nn.uniform_init(np.random.default_rng(9), 50, 20).data
    assert np.array_equal(a, b)
    assert np.abs(a).max() <= 0.08
