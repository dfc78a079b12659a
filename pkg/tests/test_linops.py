import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, settings
from hypothesis import strategies as st

from avgctl.errors import DimensionError
from avgctl.linops import expm, expm_cached, gramian, kalman_rank

from conftest import random_controllable


def simpson_gramian(A, B, tau, h=1e-4):
    """Composite Simpson rule for W(tau), independent of the library code."""
    n = int(round(tau / h))
    n += n % 2
    s = np.linspace(0.0, tau, n + 1)
    vals = []
    for si in s:
        E = scipy.linalg.expm(-A * si) @ B
        vals.append(E @ E.T)
    vals = np.array(vals)
    w = np.ones(n + 1)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return (tau / n / 3.0) * np.tensordot(w, vals, axes=1)


def test_expm_zero_time_is_identity(rng):
    M = rng.normal(size=(3, 3))
    np.testing.assert_array_equal(expm(M, 0.0), np.eye(3))


def test_expm_nilpotent():
    np.testing.assert_allclose(expm([[0, 1], [0, 0]], 1.0), [[1, 1], [0, 1]], atol=1e-15)


def test_expm_diagonal():
    b = -0.7
    E = expm(np.diag([math.log(2.0), b]), 1.0)
    np.testing.assert_allclose(E, np.diag([2.0, math.exp(b)]), rtol=1e-14)


def test_expm_matches_scipy(rng):
    for _ in range(50):
        m = rng.integers(1, 6)
        M = rng.normal(size=(m, m)) * rng.uniform(0.1, 5)
        ref = scipy.linalg.expm(M)
        assert np.linalg.norm(expm(M) - ref) <= 1e-12 * np.linalg.norm(ref)


def test_expm_rejects_non_square():
    with pytest.raises(DimensionError):
        expm(np.ones((2, 3)))


def test_expm_cached_is_readonly_and_equal(rng):
    M = rng.normal(size=(2, 2))
    E = expm_cached(M, 0.3)
    np.testing.assert_array_equal(E, expm(M, 0.3))
    assert not E.flags.writeable


@settings(max_examples=60, deadline=None)
@given(
    st.integers(1, 4),
    st.integers(0, 2**31 - 1),
    st.floats(-1.0, 1.0),
    st.floats(-1.0, 1.0),
)
def test_expm_semigroup(m, seed, s, t):
    M = np.random.default_rng(seed).normal(size=(m, m))
    M *= 5.0 / max(1.0, np.linalg.norm(M, 2))
    lhs = expm(M, s) @ expm(M, t)
    rhs = expm(M, s + t)
    assert np.linalg.norm(lhs - rhs) <= 1e-10 * np.linalg.norm(rhs)


def test_kalman_rank_examples():
    assert kalman_rank(np.zeros((3, 3)), np.eye(3)) == 3
    assert kalman_rank([[0, 1], [0, 0]], [[0], [1]]) == 2
    assert kalman_rank(np.eye(2), [[1], [1]]) == 1


def test_kalman_rank_dimension_mismatch():
    with pytest.raises(DimensionError):
        kalman_rank(np.eye(2), np.ones((3, 1)))


def test_gramian_scalar():
    G = gramian([[0.0]], [[1.0]], 2.0)
    np.testing.assert_allclose(G.W, [[2.0]], rtol=1e-14)


def test_gramian_double_integrator_closed_form_and_simpson():
    A = np.array([[0.0, 1.0], [0.0, 0.0]])
    B = np.array([[0.0], [1.0]])
    W = gramian(A, B, 1.0).W
    np.testing.assert_allclose(W, [[1 / 3, -1 / 2], [-1 / 2, 1.0]], rtol=1e-13)
    oracle = simpson_gramian(A, B, 1.0)
    assert np.max(np.abs(W - oracle)) <= 1e-10 * np.max(np.abs(W))


def test_gramian_zero_is_singular():
    G = gramian([[0.0]], [[0.0]], 1.0)
    np.testing.assert_array_equal(G.W, [[0.0]])
    assert G.cond_estimate == math.inf


def test_gramian_random_symmetric_psd_and_positive_when_controllable(rng):
    for _ in range(20):
        m = int(rng.integers(1, 5))
        A, B = random_controllable(rng, m, int(rng.integers(1, 3)))
        for tau in (0.1, 1.0):
            W = gramian(A, B, tau).W
            assert np.max(np.abs(W - W.T)) <= 1e-10 * np.max(np.abs(W))
            assert np.linalg.eigvalsh(W)[0] > 0


def test_gramian_rejects_bad_tau():
    with pytest.raises(ValueError):
        gramian([[0.0]], [[1.0]], 0.0)
