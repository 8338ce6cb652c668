import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from fedsim.datagen import paper13

# property suites run at least 1000 cases each
settings.register_profile(
    "fedsim", max_examples=1000, deadline=None,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.load_profile("fedsim")


@pytest.fixture(scope="session")
def small_federation():
    """13 clients, the largest scaled to 600 samples."""
    return paper13(seed=0, max_samples=600)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
