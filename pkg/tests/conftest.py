import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from cmtrack.channel import Environment

settings.register_profile("default", deadline=None, max_examples=50,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def box_env():
    """6 m x 4 m room, three anchors, one obstacle in the middle."""
    return Environment.room(6.0, 4.0, [(0.5, 0.5), (5.5, 0.5), (3.0, 3.5)],
                            obstacles=[(2.5, 1.5, 3.5, 2.0)])


def pytest_terminal_summary(terminalreporter):
    import test_acceptance
    if test_acceptance.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.RESULTS:
            terminalreporter.write_line(line)
