import numpy as np
import pytest

import gpseg.gp as gp
from gpseg.errors import (
    DimensionMismatch,
    EmptySupport,
    MissingFullCov,
    SpatialMismatch,
)
from gpseg.gp import ZLayout, build_z, fit, naive_condition, predict
from gpseg.kernels import SE, KernelSpec, default_length_sq, gram
from gpseg.verify import (
    check_interpolation,
    check_oracle_equivalence,
    check_prior_recovery,
    check_query_permutation_equivariance,
    check_ridge_equivalence,
    check_support_permutation_invariance,
    check_variance_monotonicity,
    random_instance,
)

SPEC1 = KernelSpec(family=SE, sigma_f_sq=1.0, length_sq=1.0)


def test_fit_scalar_weights():
    # One support point, k(x,x)=1, noise 0.01: weight = 1 / 1.01.
    model = fit(SPEC1, 0.01, np.zeros((1, 2)), np.ones((1, 1)))
    assert model.alpha_weights[0, 0] == pytest.approx(1.0 / 1.01, abs=1e-12)


def test_fit_noise_free_scalar():
    model = fit(SPEC1, 0.0, np.zeros((1, 2)), np.array([[5.0]]))
    assert model.alpha_weights[0, 0] == pytest.approx(5.0, abs=1e-12)


def test_fit_duplicate_rows_records_jitter():
    sx = np.zeros((2, 3))
    sy = np.ones((2, 1))
    model = fit(SPEC1, 0.0, sx, sy)
    assert model.factor.jitter_applied > 0.0


def test_fit_empty_support():
    with pytest.raises(EmptySupport):
        fit(SPEC1, 0.01, np.zeros((0, 2)), np.zeros((0, 1)))


def test_fit_row_mismatch():
    with pytest.raises(DimensionMismatch):
        fit(SPEC1, 0.01, np.zeros((2, 2)), np.zeros((3, 1)))


def test_predict_scalar_at_support_point():
    model = fit(SPEC1, 0.01, np.zeros((1, 2)), np.ones((1, 1)))
    post = predict(model, np.zeros((1, 2)))
    assert post.mean[0, 0] == pytest.approx(1.0 / 1.01, abs=1e-12)
    assert post.variance[0] == pytest.approx(1.0 - 1.0 / 1.01, abs=1e-12)


def test_predict_far_query_recovers_prior():
    model = fit(SPEC1, 0.01, np.zeros((1, 2)), np.ones((1, 1)))
    post = predict(model, np.full((1, 2), 50.0))
    assert abs(post.mean[0, 0]) < 1e-6
    assert post.variance[0] == pytest.approx(1.0, abs=1e-6)


def test_predict_dimension_mismatch():
    model = fit(SPEC1, 0.01, np.zeros((1, 2)), np.ones((1, 1)))
    with pytest.raises(DimensionMismatch):
        predict(model, np.zeros((1, 3)))
    with pytest.raises(DimensionMismatch):
        predict(model, np.zeros((0, 2)))


def test_fit_weights_residual(rng):
    # (K_ss + noise I) @ alpha_weights must reproduce the support encodings.
    for i in range(10):
        r = np.random.default_rng([77, i])
        spec, noise, sx, sy, _ = random_instance(r)
        model = fit(spec, noise, sx, sy)
        k = gram(spec, sx)
        k[np.diag_indices_from(k)] += noise + model.factor.jitter_applied
        residual = np.abs(k @ model.alpha_weights - sy).max()
        assert residual <= 1e-8 * sx.shape[0]


def test_full_cov_diagonal_equals_variance(rng):
    spec, noise, sx, sy, qx = random_instance(rng)
    post = predict(fit(spec, noise, sx, sy), qx, want_full_cov=True)
    assert np.array_equal(np.diag(post.full_cov), post.variance)
    assert post.variance.min() >= 0.0


def test_naive_scalar_case():
    post = naive_condition(SPEC1, 0.01, np.zeros((1, 2)), np.ones((1, 1)),
                           np.zeros((1, 2)))
    assert post.mean[0, 0] == pytest.approx(1.0 / 1.01, abs=1e-12)
    assert post.variance[0] == pytest.approx(1.0 - 1.0 / 1.01, abs=1e-12)


def test_naive_empty_support_returns_prior(rng):
    qx = rng.uniform(-1, 1, size=(4, 3))
    spec = KernelSpec(family=SE, sigma_f_sq=1.5, length_sq=default_length_sq(3))
    post = naive_condition(spec, 0.01, np.zeros((0, 3)), np.zeros((0, 2)), qx)
    assert np.array_equal(post.mean, np.zeros((4, 2)))
    np.testing.assert_allclose(post.full_cov, gram(spec, qx), atol=1e-12)


def test_naive_size_cap():
    with pytest.raises(ValueError):
        naive_condition(SPEC1, 0.01, np.zeros((200, 2)), np.zeros((200, 1)),
                        np.zeros((100, 2)))


def test_oracle_equivalence_sample():
    res = check_oracle_equivalence(instances=40)
    assert res.passed, res.detail


def test_support_permutation_invariance():
    res = check_support_permutation_invariance(instances=10)
    assert res.passed, res.detail


def test_query_permutation_equivariance():
    res = check_query_permutation_equivariance(instances=10)
    assert res.passed, res.detail


def test_variance_monotonic_when_appending_support():
    res = check_variance_monotonicity(instances=10)
    assert res.passed, res.detail


def test_interpolation_near_zero_noise():
    res = check_interpolation(instances=8)
    assert res.passed, res.detail


def test_linear_kernel_matches_ridge():
    res = check_ridge_equivalence(instances=15)
    assert res.passed, res.detail


def test_prior_recovery():
    res = check_prior_recovery(instances=8)
    assert res.passed, res.detail


def test_fault_injection_detected(monkeypatch):
    # Flipping the covariance reduction sign must break oracle equivalence.
    monkeypatch.setattr(gp, "_COV_REDUCTION_SIGN", -1.0)
    res = check_oracle_equivalence(instances=5)
    assert not res.passed


def test_build_z_mean_var_scalar():
    post = gp.Posterior(mean=np.array([[0.99]]), variance=np.array([0.0099]))
    z = build_z(post, ZLayout.MEAN_VAR)
    np.testing.assert_allclose(z.data, np.array([[0.99, 0.0099]]))


def test_build_z_mean_only(rng):
    spec, noise, sx, sy, qx = random_instance(rng)
    post = predict(fit(spec, noise, sx, sy), qx)
    z = build_z(post, ZLayout.MEAN)
    assert np.array_equal(z.data, post.mean)
    assert z.data.shape[1] == sy.shape[1]


def test_build_z_window_interior_center(rng):
    h, w = 5, 6
    spec = KernelSpec(family=SE, length_sq=default_length_sq(2))
    sx = rng.uniform(-1, 1, size=(6, 2))
    sy = rng.normal(size=(6, 2))
    qx = rng.uniform(-1, 1, size=(h * w, 2))
    post = predict(fit(spec, 0.01, sx, sy), qx, want_full_cov=True)
    z = build_z(post, ZLayout.MEAN_COV_WINDOW, (h, w))
    assert z.data.shape == (h * w, 2 + 25)
    # Center of the 5x5 window is slot 12 within the window block.
    np.testing.assert_array_equal(z.data[:, 2 + 12], post.variance)
    # Interior pixel (2, 3): every window slot holds the covariance against
    # the corresponding neighbour.
    j = 2 * w + 3
    for slot, (dr, dc) in enumerate(
        (dr, dc) for dr in range(-2, 3) for dc in range(-2, 3)
    ):
        k = (2 + dr) * w + (3 + dc)
        assert z.data[j, 2 + slot] == post.full_cov[j, k]


def test_build_z_window_corner_zero_fill(rng):
    h = w = 4
    spec = KernelSpec(family=SE, length_sq=default_length_sq(2))
    sx = rng.uniform(-1, 1, size=(5, 2))
    sy = rng.normal(size=(5, 1))
    qx = rng.uniform(-1, 1, size=(h * w, 2))
    post = predict(fit(spec, 0.01, sx, sy), qx, want_full_cov=True)
    z = build_z(post, ZLayout.MEAN_COV_WINDOW, (h, w))
    window = z.data[0, 1:]
    in_grid = [
        slot
        for slot, (dr, dc) in enumerate(
            (dr, dc) for dr in range(-2, 3) for dc in range(-2, 3)
        )
        if 0 <= 0 + dr < h and 0 <= 0 + dc < w
    ]
    assert len(in_grid) == 9
    out_grid = sorted(set(range(25)) - set(in_grid))
    assert np.array_equal(window[out_grid], np.zeros(16))


def test_build_z_window_requires_full_cov():
    post = gp.Posterior(mean=np.zeros((4, 1)), variance=np.zeros(4))
    with pytest.raises(MissingFullCov):
        build_z(post, ZLayout.MEAN_COV_WINDOW, (2, 2))


def test_build_z_spatial_mismatch():
    post = gp.Posterior(
        mean=np.zeros((4, 1)), variance=np.zeros(4), full_cov=np.zeros((4, 4))
    )
    with pytest.raises(SpatialMismatch):
        build_z(post, ZLayout.MEAN_COV_WINDOW, (3, 2))
    with pytest.raises(SpatialMismatch):
        build_z(post, ZLayout.MEAN_VAR, (3, 3))
    with pytest.raises(SpatialMismatch):
        build_z(post, ZLayout.MEAN_COV_WINDOW, None)


def test_multi_output_mean_is_per_column(rng):
    # Multi-dimensional encodings share one factorization; each output column
    # must match the corresponding single-output model exactly.
    spec, noise, sx, sy, qx = random_instance(rng, max_enc=4)
    full = predict(fit(spec, noise, sx, sy), qx)
    for col in range(sy.shape[1]):
        single = predict(fit(spec, noise, sx, sy[:, col : col + 1]), qx)
        np.testing.assert_allclose(
            full.mean[:, col : col + 1], single.mean, rtol=1e-12, atol=1e-14
        )
        np.testing.assert_array_equal(full.variance, single.variance)
