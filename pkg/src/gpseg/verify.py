"""Seeded property checks over the inference core.

Each check draws random instances, exercises ``predict`` against an
independent route (brute-force conditioning, a separately coded ridge
solve, or an algebraic identity), and reports pass/fail with the failing
seed. The CLI ``verify`` subcommand runs all of them; the test suite
reuses them directly.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gp import build_z, fit, naive_condition, predict
from .kernels import FAMILIES, LINEAR, RQ, SE, KernelSpec, default_length_sq, gram

__all__ = ["PropertyResult", "ALL_CHECKS", "run_all", "random_instance"]


@dataclass(frozen=True)
class PropertyResult:
    name: str
    passed: bool
    detail: str = ""


def random_instance(
    rng,
    max_support: int = 50,
    max_query: int = 20,
    max_dim: int = 8,
    max_enc: int = 4,
    families=FAMILIES,
):
    """Draw one GP problem: kernel spec, noise, support set, query set."""
    n_s = int(rng.integers(1, max_support + 1))
    n_q = int(rng.integers(1, max_query + 1))
    d = int(rng.integers(1, max_dim + 1))
    e = int(rng.integers(1, max_enc + 1))
    family = families[int(rng.integers(len(families)))]
    spec = KernelSpec(
        family=family,
        sigma_f_sq=float(rng.uniform(0.5, 2.0)),
        length_sq=default_length_sq(d) * float(rng.uniform(0.5, 2.0)),
        alpha=float(rng.uniform(0.5, 3.0)),
    )
    noise_sq = float(rng.uniform(0.01, 0.1))
    support_x = rng.uniform(-2.0, 2.0, size=(n_s, d))
    support_y = rng.normal(size=(n_s, e))
    query_x = rng.uniform(-2.5, 2.5, size=(n_q, d))
    return spec, noise_sq, support_x, support_y, query_x


def _spread_points(rng, n, d, min_dist, box=4.0):
    """Points with enforced pairwise separation, for well-conditioned Grams."""
    pts = []
    while len(pts) < n:
        cand = rng.uniform(-box, box, size=d)
        if all(np.linalg.norm(cand - p) >= min_dist for p in pts):
            pts.append(cand)
    return np.array(pts)


def check_oracle_equivalence(seed: int = 101, instances: int = 200, tol: float = 1e-8):
    """predict matches brute-force conditioning on mean, variance, covariance."""
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        spec, noise_sq, sx, sy, qx = random_instance(rng)
        model = fit(spec, noise_sq, sx, sy)
        post = predict(model, qx, want_full_cov=True)
        ref = naive_condition(spec, noise_sq, sx, sy, qx)
        err = max(
            float(np.abs(post.mean - ref.mean).max()),
            float(np.abs(post.variance - ref.variance).max()),
            float(np.abs(post.full_cov - ref.full_cov).max()),
        )
        if err > tol:
            return PropertyResult(
                "oracle_equivalence", False, f"seed [{seed},{i}]: max-abs {err:.3e}"
            )
    return PropertyResult("oracle_equivalence", True, f"{instances} instances")


def check_ridge_equivalence(seed: int = 102, instances: int = 50, tol: float = 1e-6):
    """Linear-kernel posterior mean equals the primal ridge solution."""
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        spec, noise_sq, sx, sy, qx = random_instance(rng, families=(LINEAR,))
        model = fit(spec, noise_sq, sx, sy)
        mean = predict(model, qx).mean
        # Ridge weights from the feature-space normal equations; this is the
        # d x d counterpart of the n x n solve inside the GP.
        d = sx.shape[1]
        w = np.linalg.solve(sx.T @ sx + noise_sq * np.eye(d), sx.T @ sy)
        err = float(np.abs(mean - qx @ w).max())
        if err > tol:
            return PropertyResult(
                "ridge_equivalence", False, f"seed [{seed},{i}]: max-abs {err:.3e}"
            )
    return PropertyResult("ridge_equivalence", True, f"{instances} instances")


def check_variance_monotonicity(
    seed: int = 103, instances: int = 50, slack: float = 1e-9
):
    """Growing the support never increases any query variance."""
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        spec, noise_sq, sx, sy, qx = random_instance(rng, max_support=30)
        prev = None
        for n in range(1, sx.shape[0] + 1):
            model = fit(spec, noise_sq, sx[:n], sy[:n])
            var = predict(model, qx).variance
            if prev is not None and float((var - prev).max()) > slack:
                return PropertyResult(
                    "variance_monotonicity",
                    False,
                    f"seed [{seed},{i}]: rose by {float((var - prev).max()):.3e} "
                    f"at support size {n}",
                )
            prev = var
    return PropertyResult("variance_monotonicity", True, f"{instances} instances")


def check_support_permutation_invariance(
    seed: int = 104, instances: int = 25, tol: float = 1e-10
):
    """Reordering support rows leaves the posterior unchanged."""
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        spec, noise_sq, sx, sy, qx = random_instance(rng)
        perm = rng.permutation(sx.shape[0])
        post = predict(fit(spec, noise_sq, sx, sy), qx, want_full_cov=True)
        shuf = predict(fit(spec, noise_sq, sx[perm], sy[perm]), qx, want_full_cov=True)
        err = max(
            float(np.abs(post.mean - shuf.mean).max()),
            float(np.abs(post.variance - shuf.variance).max()),
            float(np.abs(post.full_cov - shuf.full_cov).max()),
        )
        if err > tol:
            return PropertyResult(
                "support_permutation_invariance",
                False,
                f"seed [{seed},{i}]: max-abs {err:.3e}",
            )
    return PropertyResult(
        "support_permutation_invariance", True, f"{instances} instances"
    )


def check_query_permutation_equivariance(seed: int = 105, instances: int = 25):
    """Reordering query rows reorders mean, variance, and covariance exactly."""
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        spec, noise_sq, sx, sy, qx = random_instance(rng, max_query=16)
        model = fit(spec, noise_sq, sx, sy)
        perm = rng.permutation(qx.shape[0])
        post = predict(model, qx, want_full_cov=True)
        shuf = predict(model, qx[perm], want_full_cov=True)
        ok = (
            np.array_equal(shuf.mean, post.mean[perm])
            and np.array_equal(shuf.variance, post.variance[perm])
            and np.array_equal(shuf.full_cov, post.full_cov[np.ix_(perm, perm)])
        )
        if not ok:
            return PropertyResult(
                "query_permutation_equivariance",
                False,
                f"seed [{seed},{i}]: outputs not an exact permutation",
            )
    return PropertyResult(
        "query_permutation_equivariance", True, f"{instances} instances"
    )


def check_interpolation(seed: int = 106, instances: int = 20, tol: float = 1e-4):
    """Near-zero noise with query == support reproduces the support encodings.

    Stationary kernels only: a linear kernel's Gram has rank d and cannot
    interpolate arbitrary targets.
    """
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        d = int(rng.integers(2, 7))
        n = int(rng.integers(3, 13))
        family = (SE, RQ)[int(rng.integers(2))]
        spec = KernelSpec(family=family, length_sq=default_length_sq(d))
        sx = _spread_points(rng, n, d, min_dist=1.5)
        sy = rng.normal(size=(n, 2))
        model = fit(spec, 1e-12, sx, sy)
        err = float(np.abs(predict(model, sx).mean - sy).max())
        if err > tol:
            return PropertyResult(
                "interpolation", False, f"seed [{seed},{i}]: max-abs {err:.3e}"
            )
    return PropertyResult("interpolation", True, f"{instances} instances")


def check_prior_recovery(seed: int = 107, instances: int = 20, tol: float = 1e-6):
    """Empty or far-away supports recover the prior mean and variance."""
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        d = int(rng.integers(1, 7))
        spec = KernelSpec(family=SE, sigma_f_sq=float(rng.uniform(0.5, 2.0)),
                          length_sq=default_length_sq(d))
        qx = rng.uniform(-1.0, 1.0, size=(int(rng.integers(1, 6)), d))
        empty = naive_condition(spec, 0.01, np.zeros((0, d)), np.zeros((0, 1)), qx)
        if float(np.abs(empty.mean).max()) != 0.0 or not np.allclose(
            empty.full_cov, gram(spec, qx), atol=1e-12
        ):
            return PropertyResult(
                "prior_recovery", False, f"seed [{seed},{i}]: empty-support prior off"
            )
        # One support point far beyond 100 squared length scales.
        offset = np.zeros(d)
        offset[0] = np.sqrt(100.0 * spec.length_sq) + 50.0
        model = fit(spec, 0.01, (qx[:1] + offset), np.ones((1, 1)))
        post = predict(model, qx)
        if float(np.abs(post.variance - spec.sigma_f_sq).max()) > tol or float(
            np.abs(post.mean).max()
        ) > tol:
            return PropertyResult(
                "prior_recovery", False, f"seed [{seed},{i}]: far-support prior off"
            )
    return PropertyResult("prior_recovery", True, f"{instances} instances")


def check_gram_psd(seed: int = 108, instances: int = 30, floor: float = -1e-10):
    """Same-set Gram matrices are PSD for every family."""
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        spec, _, sx, _, _ = random_instance(rng, max_support=32)
        lo = float(np.linalg.eigvalsh(gram(spec, sx)).min())
        if lo < floor:
            return PropertyResult(
                "gram_psd", False, f"seed [{seed},{i}]: eigenvalue {lo:.3e}"
            )
    return PropertyResult("gram_psd", True, f"{instances} instances")


def check_window_center(seed: int = 109, instances: int = 10):
    """Window representation keeps each cell's own variance at the center slot."""
    for i in range(instances):
        rng = np.random.default_rng([seed, i])
        h, w = int(rng.integers(3, 7)), int(rng.integers(3, 7))
        d = int(rng.integers(2, 5))
        spec = KernelSpec(family=SE, length_sq=default_length_sq(d))
        sx = rng.uniform(-2, 2, size=(8, d))
        sy = rng.normal(size=(8, 1))
        qx = rng.uniform(-2, 2, size=(h * w, d))
        post = predict(fit(spec, 0.01, sx, sy), qx, want_full_cov=True)
        from .gp import ZLayout

        z = build_z(post, ZLayout.MEAN_COV_WINDOW, (h, w))
        centers = z.data[:, 1 + 12]
        if not np.array_equal(centers, post.variance):
            return PropertyResult(
                "window_center", False, f"seed [{seed},{i}]: center != variance"
            )
    return PropertyResult("window_center", True, f"{instances} instances")


ALL_CHECKS = (
    check_oracle_equivalence,
    check_ridge_equivalence,
    check_variance_monotonicity,
    check_support_permutation_invariance,
    check_query_permutation_equivariance,
    check_interpolation,
    check_prior_recovery,
    check_gram_psd,
    check_window_center,
)


def run_all(fast: bool = False):
    """Run every property check; ``fast`` shrinks instance counts for smoke runs."""
    results = []
    for check in ALL_CHECKS:
        results.append(check(instances=20) if fast else check())
    return results
