"""Gaussian-process few-shot segmentation engine.

Exact GP regression over multi-dimensional mask encodings, an episodic
evaluation harness with per-class IoU scoring, and a CLI for reproducible
sweeps and benchmarks.
"""

from .gp import (
    GPModel,
    Posterior,
    ZLayout,
    ZRepresentation,
    build_z,
    fit,
    naive_condition,
    predict,
)
from .kernels import LINEAR, RQ, SE, KernelSpec, default_length_sq, gram, kernel_eval
from .linalg import CholeskyFactor, cholesky, solve_lower, solve_spd

__version__ = "0.1.0"

__all__ = [
    "CholeskyFactor",
    "GPModel",
    "KernelSpec",
    "LINEAR",
    "Posterior",
    "RQ",
    "SE",
    "ZLayout",
    "ZRepresentation",
    "build_z",
    "cholesky",
    "default_length_sq",
    "fit",
    "gram",
    "kernel_eval",
    "naive_condition",
    "predict",
    "solve_lower",
    "solve_spd",
    "__version__",
]
