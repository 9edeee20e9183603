import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from sparseps.data import Dataset


def make_dataset(n=40, p=3, seed=0, phi=None, rate_shift=0.3):
    """Small random logistic-response dataset for unit tests."""
    rng = np.random.default_rng(seed)
    X = np.hstack([np.ones((n, 1)), rng.standard_normal((n, p))])
    if phi is None:
        phi = np.zeros(p + 1)
        phi[0] = rate_shift
        phi[1] = 1.0
    eta = X @ phi
    prob = 1.0 / (1.0 + np.exp(-eta))
    delta = (rng.random(n) < prob).astype(np.int8)
    y = 1.0 + 2.0 * X[:, 1] + rng.standard_normal(n)
    return Dataset(x=X, y=y, delta=delta)


@pytest.fixture
def small_data():
    data = make_dataset(n=60, p=3, seed=7)
    assert data.n_respondents >= 10
    return data
