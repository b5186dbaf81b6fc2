import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcl.errors import DimensionError, ParameterError
from mpcl.hopfield import EnergyParams, energy, hopfield_op, iterate_to_fixpoint, update
from mpcl.numeric import make_rng

S = 1 / (1 + math.e)  # softmax([1, 0])[1]


def test_energy_single_pattern():
    x = np.array([0.6, 0.8])
    assert energy(x, x[:, None], EnergyParams(1.0)) == pytest.approx(-0.5, abs=1e-15)


def test_energy_zero_state():
    X = make_rng(0).standard_normal((3, 5))
    assert energy(np.zeros(3), X, EnergyParams(2.0, 0.25)) == pytest.approx(-math.log(5) / 2 + 0.25, abs=1e-14)


def test_energy_c0_shift():
    rng = make_rng(1)
    xi, X = rng.standard_normal(4), rng.standard_normal((4, 3))
    assert energy(xi, X, EnergyParams(1.5, 3.0)) - energy(xi, X, EnergyParams(1.5)) == pytest.approx(3.0, abs=1e-14)


def test_energy_rejects_bad_inputs():
    with pytest.raises(ParameterError):
        EnergyParams(0.0)
    with pytest.raises(DimensionError):
        energy(np.zeros(3), np.zeros((4, 2)), EnergyParams(1.0))


def test_update_single_pattern_returns_it():
    x = np.array([[0.3], [-1.2], [2.0]])
    assert np.allclose(update(np.array([5.0, 1.0, -3.0]), x, 4.0), x[:, 0], atol=0)


def test_update_small_beta_is_column_mean():
    X = make_rng(2).standard_normal((3, 4))
    assert np.allclose(update(np.ones(3), X, 1e-9), X.mean(axis=1), atol=1e-8)


def test_update_hand_value():
    X = np.eye(2)
    assert np.allclose(update(np.array([1.0, 0.0]), X, 1.0), [1 - S, S], atol=1e-15)


def test_update_equals_operator_bitwise():
    rng = make_rng(3)
    xi, X = rng.standard_normal(5), rng.standard_normal((5, 7))
    op = hopfield_op(xi[None], X.T, X.T, 2.5).data[0]
    assert np.array_equal(update(xi, X, 2.5), op)


def test_operator_hand_value():
    out = hopfield_op([[1.0, 0.0]], np.eye(2), np.eye(2), 1.0).data
    assert np.allclose(out, [[1 - S, S]], atol=1e-15)


def test_operator_single_stored_row():
    v = np.array([[2.0, -1.0, 0.5]])
    out = hopfield_op(make_rng(4).standard_normal((6, 2)), [[1.0, 1.0]], v, 7.0).data
    assert np.array_equal(out, np.repeat(v, 6, axis=0))


def test_operator_large_beta_argmax():
    rng = make_rng(5)
    R, Y, V = rng.standard_normal((4, 3)), rng.standard_normal((6, 3)), rng.standard_normal((6, 2))
    best = (R @ Y.T).argmax(axis=1)
    assert np.allclose(hopfield_op(R, Y, V, 1e4).data, V[best], atol=1e-9)


def test_operator_shape_errors():
    with pytest.raises(DimensionError):
        hopfield_op(np.ones((2, 3)), np.ones((4, 2)), np.ones((4, 2)), 1.0)
    with pytest.raises(DimensionError):
        hopfield_op(np.ones((2, 3)), np.ones((4, 3)), np.ones((5, 2)), 1.0)


def test_operator_batched_matches_loop():
    rng = make_rng(6)
    R, Y, V = rng.standard_normal((3, 2, 4)), rng.standard_normal((3, 5, 4)), rng.standard_normal((3, 5, 6))
    out = hopfield_op(R, Y, V, 0.7).data
    for i in range(3):
        assert np.allclose(out[i], hopfield_op(R[i], Y[i], V[i], 0.7).data, atol=1e-15)


def test_fixpoint_from_stored_pattern_large_beta():
    X = np.linalg.qr(make_rng(7).standard_normal((6, 6)))[0][:, :4] * 3.0
    res = iterate_to_fixpoint(X[:, 2].copy(), X, 20.0)
    assert res.converged and res.iterations <= 2
    assert np.allclose(res.state, X[:, 2], atol=1e-8)


def test_fixpoint_single_pattern_any_start():
    x = np.array([[1.0], [2.0], [-0.5]])
    res = iterate_to_fixpoint(make_rng(8).standard_normal(3), x, 0.3)
    assert res.converged and np.allclose(res.state, x[:, 0])


def test_fixpoint_rejects_bad_args():
    with pytest.raises(ParameterError):
        iterate_to_fixpoint(np.zeros(2), np.eye(2), 1.0, max_iters=0)


@settings(max_examples=200, deadline=None)
@given(st.integers(1, 16), st.integers(1, 8), st.floats(0.1, 50), st.integers(0, 2**32 - 1))
def test_energy_never_increases(d, m, beta, seed):
    rng = make_rng(seed)
    X = rng.standard_normal((d, m)) * rng.uniform(0.1, 3)
    xi = rng.standard_normal(d) * rng.uniform(0.1, 3)
    p = EnergyParams(beta)
    assert energy(update(xi, X, beta), X, p) <= energy(xi, X, p) + 1e-10
    trace = iterate_to_fixpoint(xi, X, beta).energies
    assert all(b <= a + 1e-10 for a, b in zip(trace, trace[1:]))
