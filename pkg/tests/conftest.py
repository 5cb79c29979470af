import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from blindloc import presets

settings.register_profile(
    "blindloc",
    deadline=None,
    derandomize=True,
    max_examples=40,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.function_scoped_fixture],
)
settings.load_profile("blindloc")


@pytest.fixture(scope="session")
def a1():
    return presets.benchmark_family("A1", M=100)


@pytest.fixture(scope="session")
def a1_fine():
    return presets.benchmark_family("A1", M=200)


@pytest.fixture(scope="session")
def a2():
    return presets.benchmark_family("A2", M=100)


@pytest.fixture(scope="session")
def a3():
    return presets.benchmark_family("A3", M=100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
