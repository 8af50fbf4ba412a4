"""Kernel families and Gram-matrix construction.

Three families are supported: squared exponential (``se``), rational
quadratic (``rq``), and ``linear``. The output scale multiplies the two
stationary families; the linear kernel is a bare dot product. Squared
distances are computed as |x|^2 + |y|^2 - 2 x.y and clamped at zero so
blocked Gram construction can reuse precomputed norms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, InvalidConfig
from .linalg import as_matrix

SE = "se"
RQ = "rq"
LINEAR = "linear"

FAMILIES = (SE, RQ, LINEAR)

# Rows of the left operand processed per distance buffer.
_BLOCK_ROWS = 512


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family plus hyperparameters.

    ``alpha`` only affects the rational quadratic family; ``length_sq`` is
    ignored by the linear kernel. All three must be finite and positive.
    """

    family: str = SE
    sigma_f_sq: float = 1.0
    length_sq: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidConfig(
                f"unknown kernel family {self.family!r}, expected one of {FAMILIES}"
            )
        for name in ("sigma_f_sq", "length_sq", "alpha"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise InvalidConfig(f"{name} must be finite and > 0, got {v}")


def default_length_sq(d: int) -> float:
    """Default squared length scale for feature dimensionality ``d``: sqrt(d)."""
    if d < 1:
        raise ValueError(f"feature dimensionality must be >= 1, got {d}")
    return math.sqrt(d)


def as_feature_set(a, name: str = "features") -> np.ndarray:
    """Validate ``a`` as an (n, d) float64 array with d > 0."""
    m = as_matrix(a, name)
    if m.shape[1] == 0:
        raise DimensionMismatch(f"{name} must have at least one column")
    return m


def _from_sqdist(spec: KernelSpec, d2):
    if spec.family == SE:
        return spec.sigma_f_sq * np.exp(d2 / (-2.0 * spec.length_sq))
    return spec.sigma_f_sq * (1.0 + d2 / (2.0 * spec.alpha * spec.length_sq)) ** (
        -spec.alpha
    )


def kernel_eval(spec: KernelSpec, x, y) -> float:
    """Evaluate the kernel on a single pair of feature vectors."""
    xv = np.asarray(x, dtype=np.float64).ravel()
    yv = np.asarray(y, dtype=np.float64).ravel()
    if xv.shape != yv.shape:
        raise DimensionMismatch(f"vector sizes differ: {xv.shape} vs {yv.shape}")
    if spec.family == LINEAR:
        return float(xv @ yv)
    diff = xv - yv
    return float(_from_sqdist(spec, float(diff @ diff)))


def gram(spec: KernelSpec, a, b=None) -> np.ndarray:
    """Pairwise kernel evaluations between two feature sets.

    With ``b`` omitted (or the identical array), returns the symmetric
    same-set Gram matrix; symmetry is enforced exactly and the stationary
    diagonal is pinned to ``sigma_f_sq``.
    """
    am = as_feature_set(a, "a")
    same = b is None or b is a
    bm = am if same else as_feature_set(b, "b")
    if am.shape[1] != bm.shape[1]:
        raise DimensionMismatch(
            f"feature dims differ: {am.shape[1]} vs {bm.shape[1]}"
        )
    if spec.family == LINEAR:
        g = am @ bm.T
        if same:
            g = 0.5 * (g + g.T)
        return g

    na = np.einsum("ij,ij->i", am, am)
    nb = na if same else np.einsum("ij,ij->i", bm, bm)
    g = np.empty((am.shape[0], bm.shape[0]))
    for lo in range(0, am.shape[0], _BLOCK_ROWS):
        hi = min(lo + _BLOCK_ROWS, am.shape[0])
        d2 = na[lo:hi, None] + nb[None, :] - 2.0 * (am[lo:hi] @ bm.T)
        np.maximum(d2, 0.0, out=d2)
        if same:
            # Zero the true diagonal so k(x, x) comes out exactly sigma_f_sq.
            idx = np.arange(lo, hi)
            d2[idx - lo, idx] = 0.0
        g[lo:hi] = _from_sqdist(spec, d2)
    if same:
        g = 0.5 * (g + g.T)
    return g


def gram_diag(spec: KernelSpec, a) -> np.ndarray:
    """Diagonal of the same-set Gram matrix, without forming it."""
    am = as_feature_set(a, "a")
    if spec.family == LINEAR:
        return np.einsum("ij,ij->i", am, am)
    return np.full(am.shape[0], spec.sigma_f_sq)
