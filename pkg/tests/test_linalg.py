import numpy as np
import pytest

from gpseg.errors import (
    DimensionMismatch,
    NonFiniteData,
    NotPositiveDefinite,
    NotSymmetric,
)
from gpseg.linalg import cholesky, solve_lower, solve_spd

from conftest import random_spd


def test_cholesky_identity():
    f = cholesky(np.eye(3))
    assert np.array_equal(f.lower, np.eye(3))
    assert f.jitter_applied == 0.0
    assert f.dim == 3


def test_cholesky_2x2_hand_expansion():
    # [[4,2],[2,3]] factors as [[2,0],[1,sqrt(2)]] by direct expansion.
    f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    expected = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
    np.testing.assert_allclose(f.lower, expected, atol=1e-14)
    assert f.jitter_applied == 0.0


def test_cholesky_singular_needs_jitter():
    f = cholesky(np.array([[1.0, 1.0], [1.0, 1.0]]))
    assert f.jitter_applied in (1e-10, 1e-8, 1e-6)
    a_jit = np.ones((2, 2)) + f.jitter_applied * np.eye(2)
    np.testing.assert_allclose(f.lower @ f.lower.T, a_jit, atol=2e-8)


def test_cholesky_rejects_asymmetry():
    with pytest.raises(NotSymmetric):
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))


def test_cholesky_rejects_non_square():
    with pytest.raises(DimensionMismatch):
        cholesky(np.ones((2, 3)))


def test_cholesky_rejects_nan():
    with pytest.raises(NonFiniteData):
        cholesky(np.array([[np.nan, 0.0], [0.0, 1.0]]))


def test_cholesky_negative_definite_fails_all_jitter():
    with pytest.raises(NotPositiveDefinite):
        cholesky(-np.eye(4))


def test_cholesky_deterministic(rng):
    a = random_spd(rng, 12)
    f1 = cholesky(a.copy())
    f2 = cholesky(a.copy())
    assert np.array_equal(f1.lower, f2.lower)


@pytest.mark.parametrize("n", [2, 5, 17, 33, 64])
@pytest.mark.parametrize("cond", [1e1, 1e4, 1e6])
def test_cholesky_reconstruction(rng, n, cond):
    a = random_spd(rng, n, cond)
    f = cholesky(a)
    target = a + f.jitter_applied * np.eye(n)
    assert np.abs(f.lower @ f.lower.T - target).max() <= 1e-8 * n


def test_solve_lower_identity(rng):
    b = rng.standard_normal((4, 3))
    f = cholesky(np.eye(4))
    np.testing.assert_array_equal(solve_lower(f, b), b)


def test_solve_lower_hand_case():
    # Forward substitution: 2 x1 = 2 gives x1 = 1; x1 + sqrt(2) x2 = 1 + sqrt(2)
    # gives x2 = 1.
    f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    b = np.array([[2.0], [1.0 + np.sqrt(2.0)]])
    np.testing.assert_allclose(solve_lower(f, b), np.ones((2, 1)), atol=1e-14)


def test_solve_lower_dimension_mismatch():
    f = cholesky(np.eye(3))
    with pytest.raises(DimensionMismatch):
        solve_lower(f, np.ones((2, 1)))


def test_solve_spd_scaled_identity():
    f = cholesky(2.0 * np.eye(5))
    np.testing.assert_allclose(solve_spd(f, np.ones((5, 2))), 0.5 * np.ones((5, 2)))


def test_solve_spd_2x2_hand_elimination():
    # Eliminating [[4,2],[2,3]] x = [8,7] by hand gives x = (1.25, 1.5).
    f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    x = solve_spd(f, np.array([[8.0], [7.0]]))
    np.testing.assert_allclose(x, np.array([[1.25], [1.5]]), atol=1e-14)


@pytest.mark.parametrize("n", [1, 3, 8])
def test_solve_spd_residual_small_systems(rng, n):
    a = random_spd(rng, n, cond=1e2)
    b = rng.standard_normal((n, 2))
    x = solve_spd(cholesky(a), b)
    assert np.abs(a @ x - b).max() <= 1e-9


@pytest.mark.parametrize("n", [16, 48, 64])
def test_solve_spd_residual_bound(rng, n):
    a = random_spd(rng, n, cond=1e6)
    b = rng.standard_normal((n, 4))
    x = solve_spd(cholesky(a), b)
    assert np.abs(a @ x - b).max() <= 1e-8 * n
