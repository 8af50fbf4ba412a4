import numpy as np
import pytest


def random_spd(rng, n, cond=1e3):
    """SPD matrix with eigenvalues log-spaced so the condition number is ``cond``."""
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    eigs = np.logspace(-np.log10(cond), 0.0, n)
    return (q * eigs) @ q.T


@pytest.fixture
def rng():
    return np.random.default_rng(20240811)
