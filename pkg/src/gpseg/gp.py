"""Exact GP few-shot learner.

``fit`` conditions on the support set once (Gram build, noisy Cholesky,
pre-solved weights); ``predict`` then evaluates the posterior over any
query set. Mask encodings may be multi-dimensional: the covariance is
shared across output dimensions, so one factorization serves all of them
and the posterior keeps a single variance per query point.

``naive_condition`` is a deliberately independent reference path (per-pair
kernel evaluation, explicit joint covariance, hand-rolled Gauss-Jordan
inversion) used to cross-check ``predict``. It must never share the solver
route with the fast path.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import (
    DimensionMismatch,
    EmptySupport,
    InvalidConfig,
    MissingFullCov,
    SingularJoint,
    SpatialMismatch,
)
from .kernels import KernelSpec, as_feature_set, gram, gram_diag, kernel_eval
from .linalg import (
    JITTER_SCHEDULE,
    CholeskyFactor,
    as_matrix,
    cholesky,
    solve_lower,
    solve_spd,
)

# Rounding may push a posterior variance slightly negative; anything below
# this floor is a logic error, not noise.
_VARIANCE_FLOOR = -1e-10

# Fault-injection hook for the verification suite; 1.0 in normal operation.
_COV_REDUCTION_SIGN = 1.0


@dataclass(frozen=True)
class GPModel:
    """Fitted few-shot learner, immutable after ``fit``."""

    spec: KernelSpec
    noise_sq: float
    support_x: np.ndarray
    support_y: np.ndarray
    factor: CholeskyFactor
    alpha_weights: np.ndarray


@dataclass(frozen=True)
class Posterior:
    """Gaussian posterior over query encodings.

    ``variance`` is the latent-function variance (observation noise is not
    added back). When ``full_cov`` is present its diagonal equals
    ``variance`` exactly.
    """

    mean: np.ndarray
    variance: np.ndarray
    full_cov: np.ndarray | None = None


class ZLayout(Enum):
    MEAN = "mean"
    MEAN_VAR = "mean_var"
    MEAN_COV_WINDOW = "mean_cov_window"


@dataclass(frozen=True)
class ZRepresentation:
    """Per-query downstream representation rows.

    Row widths: E for MEAN, E+1 for MEAN_VAR, E+25 for MEAN_COV_WINDOW
    (5x5 spatial window of posterior cross-covariances, row-major,
    zero-filled outside the grid).
    """

    layout: ZLayout
    data: np.ndarray
    spatial: tuple[int, int] | None = None


def fit(spec: KernelSpec, noise_sq: float, support_x, support_y) -> GPModel:
    """Condition a GP on support features and their mask encodings.

    Builds the noisy support Gram matrix, factorizes it, and pre-solves the
    regression weights so that prediction reduces to matrix products and
    one triangular solve.
    """
    sx = as_feature_set(support_x, "support_x")
    sy = as_matrix(support_y, "support_y")
    if sx.shape[0] == 0:
        raise EmptySupport("support set is empty")
    if sy.shape[0] != sx.shape[0]:
        raise DimensionMismatch(
            f"support_y rows {sy.shape[0]} != support points {sx.shape[0]}"
        )
    if not (np.isfinite(noise_sq) and noise_sq >= 0):
        raise InvalidConfig(f"noise_sq must be finite and >= 0, got {noise_sq}")
    k_ss = gram(spec, sx)
    k_ss[np.diag_indices_from(k_ss)] += noise_sq
    factor = cholesky(k_ss)
    alpha_weights = solve_spd(factor, sy)
    return GPModel(
        spec=spec,
        noise_sq=float(noise_sq),
        support_x=sx,
        support_y=sy,
        factor=factor,
        alpha_weights=alpha_weights,
    )


def _finalize_variance(raw: np.ndarray) -> np.ndarray:
    worst = float(raw.min()) if raw.size else 0.0
    if worst < _VARIANCE_FLOOR:
        raise AssertionError(
            f"posterior variance {worst:.3e} below floor {_VARIANCE_FLOOR:.0e}; "
            "this indicates a covariance construction bug, not rounding"
        )
    return np.maximum(raw, 0.0)


def predict(model: GPModel, query_x, want_full_cov: bool = False) -> Posterior:
    """Posterior mean and (co)variance over query features.

    The mean is one matrix product per encoding dimension against the
    pre-solved weights. The variance subtracts squared column norms of a
    single forward substitution; the full query-by-query covariance is
    opt-in because only the window representation consumes it.
    """
    qx = as_feature_set(query_x, "query_x")
    if qx.shape[1] != model.support_x.shape[1]:
        raise DimensionMismatch(
            f"query dim {qx.shape[1]} != support dim {model.support_x.shape[1]}"
        )
    if qx.shape[0] == 0:
        raise DimensionMismatch("query set is empty")
    # Compute in a canonical query order and scatter back, so the outputs for
    # a given point never depend on where it sits in the batch (BLAS kernels
    # round differently by column position otherwise).
    order = np.lexsort(qx.T)
    qs = np.ascontiguousarray(qx[order])
    k_sq = gram(model.spec, model.support_x, qs)
    mean = k_sq.T @ model.alpha_weights
    v = solve_lower(model.factor, k_sq)
    inv = np.empty_like(order)
    inv[order] = np.arange(order.size)
    if want_full_cov:
        k_qq = gram(model.spec, qs)
        full_cov = k_qq - _COV_REDUCTION_SIGN * (v.T @ v)
        full_cov = 0.5 * (full_cov + full_cov.T)
        variance = _finalize_variance(np.diag(full_cov).copy())
        full_cov[np.diag_indices_from(full_cov)] = variance
        return Posterior(
            mean=mean[inv],
            variance=variance[inv],
            full_cov=full_cov[np.ix_(inv, inv)],
        )
    raw = gram_diag(model.spec, qs) - _COV_REDUCTION_SIGN * np.einsum(
        "ij,ij->j", v, v
    )
    return Posterior(mean=mean[inv], variance=_finalize_variance(raw)[inv])


def _gauss_jordan_inverse(a: np.ndarray, pivot_tol: float) -> np.ndarray:
    """Invert by Gauss-Jordan elimination with partial pivoting.

    Reference-path solver, kept free of factorization code on purpose.
    """
    n = a.shape[0]
    aug = np.hstack([a.copy(), np.eye(n)])
    for col in range(n):
        p = col + int(np.argmax(np.abs(aug[col:, col])))
        if abs(aug[p, col]) <= pivot_tol:
            raise SingularJoint(
                f"pivot {aug[p, col]:.3e} at column {col} below tolerance"
            )
        if p != col:
            aug[[col, p]] = aug[[p, col]]
        aug[col] /= aug[col, col]
        others = np.arange(n) != col
        aug[others] -= np.outer(aug[others, col], aug[col])
    return aug[:, n:]


def naive_condition(
    spec: KernelSpec, noise_sq: float, support_x, support_y, query_x
) -> Posterior:
    """Reference posterior via the explicit joint covariance.

    Evaluates every kernel entry pairwise, assembles the full joint
    covariance with the noise term on the support block only, inverts that
    block by Gauss-Jordan elimination, and applies the conditioning
    formulas directly. Small inputs only; this exists to cross-check
    ``predict``, not to be fast.
    """
    sx = np.asarray(support_x, dtype=np.float64)
    if sx.ndim != 2:
        raise DimensionMismatch("support_x must be 2-D")
    if sx.shape[0] > 0:
        sx = as_feature_set(sx, "support_x")
    sy = np.asarray(support_y, dtype=np.float64)
    if sy.ndim != 2:
        raise DimensionMismatch("support_y must be 2-D")
    qx = as_feature_set(query_x, "query_x")
    n_s, n_q = sx.shape[0], qx.shape[0]
    if n_s + n_q > 256:
        raise ValueError(f"reference path limited to 256 points, got {n_s + n_q}")
    if sy.shape[0] != n_s:
        raise DimensionMismatch("support_y rows must match support points")

    pts = np.vstack([sx, qx]) if n_s else qx
    total = n_s + n_q
    joint = np.empty((total, total))
    for i in range(total):
        for j in range(i, total):
            val = kernel_eval(spec, pts[i], pts[j])
            joint[i, j] = val
            joint[j, i] = val
    joint[np.arange(n_s), np.arange(n_s)] += noise_sq

    k_qq = joint[n_s:, n_s:]
    if n_s == 0:
        mean = np.zeros((n_q, sy.shape[1]))
        full_cov = k_qq.copy()
    else:
        k_ss_noisy = joint[:n_s, :n_s]
        k_sq = joint[:n_s, n_s:]
        pivot_tol = n_s * np.finfo(np.float64).eps * max(
            1.0, float(np.abs(k_ss_noisy).max())
        )
        inv = None
        for jitter in JITTER_SCHEDULE:
            try:
                inv = _gauss_jordan_inverse(
                    k_ss_noisy + jitter * np.eye(n_s), pivot_tol
                )
                break
            except SingularJoint:
                continue
        if inv is None:
            raise SingularJoint("support block singular beyond the jitter schedule")
        mean = k_sq.T @ inv @ sy
        full_cov = k_qq - k_sq.T @ inv @ k_sq
        full_cov = 0.5 * (full_cov + full_cov.T)
    variance = _finalize_variance(np.diag(full_cov).copy())
    full_cov[np.diag_indices_from(full_cov)] = variance
    return Posterior(mean=mean, variance=variance, full_cov=full_cov)


# Offsets of the 5x5 spatial window in row-major order; slot 12 is the center.
_WINDOW_OFFSETS = [(dr, dc) for dr in range(-2, 3) for dc in range(-2, 3)]


def build_z(
    post: Posterior, layout: ZLayout, spatial: tuple[int, int] | None = None
) -> ZRepresentation:
    """Assemble per-query representation rows from a posterior.

    MEAN keeps the posterior mean rows; MEAN_VAR appends the per-point
    variance; MEAN_COV_WINDOW appends the 25 cross-covariances against the
    5x5 spatial neighborhood of each grid cell, zero-filled where the
    window leaves the grid.
    """
    n_q = post.mean.shape[0]
    if spatial is not None and spatial[0] * spatial[1] != n_q:
        raise SpatialMismatch(
            f"grid {spatial[0]}x{spatial[1]} incompatible with {n_q} query points"
        )
    if layout is ZLayout.MEAN:
        return ZRepresentation(layout, post.mean.copy(), spatial)
    if layout is ZLayout.MEAN_VAR:
        data = np.hstack([post.mean, post.variance[:, None]])
        return ZRepresentation(layout, data, spatial)
    if layout is not ZLayout.MEAN_COV_WINDOW:
        raise ValueError(f"unknown layout {layout!r}")
    if post.full_cov is None:
        raise MissingFullCov("window layout requires the full posterior covariance")
    if spatial is None:
        raise SpatialMismatch("window layout requires a spatial grid")
    h, w = spatial
    rows = np.arange(n_q) // w
    cols = np.arange(n_q) % w
    window = np.zeros((n_q, 25))
    for slot, (dr, dc) in enumerate(_WINDOW_OFFSETS):
        rr = rows + dr
        cc = cols + dc
        ok = (rr >= 0) & (rr < h) & (cc >= 0) & (cc < w)
        src = np.flatnonzero(ok)
        window[src, slot] = post.full_cov[src, rr[src] * w + cc[src]]
    return ZRepresentation(layout, np.hstack([post.mean, window]), spatial)
