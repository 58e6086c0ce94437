import numpy as np
import pytest

from dropout_dro.glm import Dataset


def make_linear(rng, n, d, beta=None, noise=1.0):
    x = rng.standard_normal((n, d))
    beta = np.ones(d) if beta is None else np.asarray(beta, float)
    return Dataset(x, x @ beta + noise * rng.standard_normal(n))


def make_logistic(rng, n, d, scale=0.7):
    x = rng.standard_normal((n, d))
    beta = scale * rng.standard_normal(d)
    p = 1.0 / (1.0 + np.exp(-(x @ beta)))
    return Dataset(x, (rng.random(n) < p).astype(float))


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)
