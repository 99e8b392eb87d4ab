import numpy as np
import pytest

from rerand.sampler import RngSpec


@pytest.fixture
def gen():
    return RngSpec(12345).generator()


@pytest.fixture
def x12():
    """Two correlated covariates on twelve units."""
    g = RngSpec(99).generator()
    z = g.standard_normal((12, 2))
    return z @ np.array([[1.0, 0.4], [0.0, 0.9]])


@pytest.fixture
def y12(x12):
    g = RngSpec(100).generator()
    return x12 @ np.array([1.0, -0.5]) + g.standard_normal(12)
