import numpy as np
import pytest

from beamspace import SystemConfig, sample_all_channels, sample_geometry
from beamspace.scenario import rng_stream


def make_channels(cfg: SystemConfig, trial: int = 0):
    geometry = sample_geometry(cfg, rng_stream(cfg.seed, trial, 0))
    return sample_all_channels(cfg, geometry, rng_stream(cfg.seed, trial, 1))


def random_stack(rng, n, k, scale=1.0):
    """Random complex effective-channel stack (N x K)."""
    return scale * (rng.standard_normal((n, k)) + 1j * rng.standard_normal((n, k))) / np.sqrt(2.0)


def random_psd(rng, n, scale=1.0):
    x = (rng.standard_normal((n, n)) + 1j * rng.standard_normal((n, n))) / np.sqrt(2.0)
    return scale * (x @ x.conj().T) / n


def logdet2_longdouble(matrix):
    """log2 |det| by Gaussian elimination in extended precision.

    Independent of the library's Cholesky path; intended for Hermitian
    positive definite arguments where the determinant is real positive.
    """
    a = np.array(matrix, dtype=np.clongdouble)
    n = a.shape[0]
    total = np.longdouble(0.0)
    for i in range(n):
        p = int(np.argmax(np.abs(a[i:, i]))) + i
        if p != i:
            a[[i, p]] = a[[p, i]]
        pivot = a[i, i]
        total += np.log2(np.abs(pivot).astype(np.longdouble))
        for r in range(i + 1, n):
            a[r, i:] -= (a[r, i] / pivot) * a[i, i:]
    return float(total)


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
