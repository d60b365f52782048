import numpy as np
import pytest

from rbflab.geometry import generate_nodes, star_domain


@pytest.fixture(scope="session")
def star():
    return star_domain()


@pytest.fixture(scope="session")
def nodes_coarse(star):
    """Small shared node set (N ~ 270) for operator-level tests."""
    return generate_nodes(star, 0.1, seed=0)


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(12345)
