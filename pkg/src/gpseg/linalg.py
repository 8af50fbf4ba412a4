"""Dense symmetric linear algebra for exact GP inference.

Everything runs in 64-bit floats. Factorization failure is handled by an
explicit jitter escalation schedule whose applied value is recorded on the
factor, so silent regularization can never mask a modeling bug.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import DimensionMismatch, NonFiniteData, NotPositiveDefinite, NotSymmetric

# Smallest-first diagonal loads tried when plain factorization fails.
JITTER_SCHEDULE = (0.0, 1e-10, 1e-8, 1e-6)

SYMMETRY_RTOL = 1e-10


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return ``a`` as a finite, 2-D float64 array."""
    m = np.ascontiguousarray(a, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionMismatch(f"{name} must be 2-D, got ndim={m.ndim}")
    if not np.isfinite(m).all():
        raise NonFiniteData(f"{name} contains NaN or infinite entries")
    return m


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor L with L @ L.T = A + jitter_applied * I."""

    dim: int
    lower: np.ndarray
    jitter_applied: float


def cholesky(a, jitter_schedule=JITTER_SCHEDULE) -> CholeskyFactor:
    """Factor a symmetric positive-(semi)definite matrix.

    Tries each diagonal load in ``jitter_schedule`` (ascending) and returns
    the factor for the first one that succeeds, recording the value used.

    Raises
    ------
    NotSymmetric
        If ``a`` deviates from its transpose by more than 1e-10 relative.
    NotPositiveDefinite
        If every jitter level fails.
    """
    m = as_matrix(a, "a")
    n, k = m.shape
    if n != k:
        raise DimensionMismatch(f"matrix must be square, got {n}x{k}")
    scale = float(np.abs(m).max()) if n else 0.0
    asym = float(np.abs(m - m.T).max()) if n else 0.0
    if asym > SYMMETRY_RTOL * max(scale, 1e-300):
        raise NotSymmetric(
            f"max asymmetry {asym:.3e} exceeds {SYMMETRY_RTOL:.0e} relative"
        )
    for jitter in jitter_schedule:
        try:
            lower = np.linalg.cholesky(m if jitter == 0.0 else m + jitter * np.eye(n))
        except np.linalg.LinAlgError:
            continue
        return CholeskyFactor(dim=n, lower=lower, jitter_applied=float(jitter))
    raise NotPositiveDefinite(
        f"factorization failed for all jitter levels {tuple(jitter_schedule)}"
    )


def solve_lower(factor: CholeskyFactor, b) -> np.ndarray:
    """Solve L @ X = B by forward substitution."""
    bm = as_matrix(b, "b")
    if bm.shape[0] != factor.dim:
        raise DimensionMismatch(
            f"factor dim {factor.dim} does not match rows {bm.shape[0]}"
        )
    return sla.solve_triangular(factor.lower, bm, lower=True, check_finite=False)


def solve_spd(factor: CholeskyFactor, b) -> np.ndarray:
    """Solve (L @ L.T) @ X = B via two triangular solves.

    The inverse is never formed explicitly.
    """
    z = solve_lower(factor, b)
    return sla.solve_triangular(factor.lower, z, lower=True, trans=1, check_finite=False)
