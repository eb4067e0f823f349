import numpy as np
import pytest

from etkf_lab.ensemble import Ensemble


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_ensemble(rng, m, N, scale=1.0):
    return Ensemble(rng.standard_normal((m, 1)) + scale * rng.standard_normal((m, N)))


def rel(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-300)
