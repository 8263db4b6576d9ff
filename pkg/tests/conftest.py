import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "repo",
    max_examples=40,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture
def two_type():
    from burnout import Discrete

    return Discrete((1.0, 3.0), (0.5, 0.5))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
