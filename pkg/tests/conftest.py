import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from psrnoise.angular import build_scheme, geometry_for, scheme_from_dict

settings.register_profile(
    "default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")

TWO_LEVEL = {
    "name": "two-level",
    "nuclear_spin": 0,
    "J_g": 0,
    "J_e": 1,
    "ground": [{"name": "g", "F": 0}],
    "excited": [{"name": "e", "F": 1, "m": [0]}],
    "frame": "pump",
}


@pytest.fixture(scope="session")
def two_level():
    s = scheme_from_dict(TWO_LEVEL)
    return s, geometry_for(s)


@pytest.fixture(scope="session")
def toy():
    s = build_scheme("four-level-toy", toy_splitting=50.0)
    return s, geometry_for(s)


@pytest.fixture(scope="session")
def fg1():
    s = build_scheme("rb87-d1-Fg1")
    return s, geometry_for(s)


@pytest.fixture(scope="session")
def fg2():
    s = build_scheme("rb87-d1-Fg2")
    return s, geometry_for(s)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
