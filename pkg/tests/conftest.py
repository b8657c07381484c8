import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)


def make_instance(seed, n=10, p=5, noise=0.5, offset=0.0):
    """Generic dense instance with a simplex-interior signal."""
    gen = np.random.default_rng(seed)
    x = gen.normal(size=(n, p)) + offset
    w = gen.dirichlet(np.full(p, 2.0))
    y = x @ w + noise * gen.normal(size=n)
    return y, x
