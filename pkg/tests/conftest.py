import pytest
from hypothesis import HealthCheck, settings

from sharedrides.netgraph import RoadNetwork, make_types

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def line100():
    return RoadNetwork.line(100)


@pytest.fixture
def two_type_line(line100):
    """Long type 0 -> 100 and short type 50 -> 100 on the 100-unit line."""
    return line100, make_types(line100, [(0, 100), (50, 100)], [0.05, 0.05])
