import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from disorder_lab.disorder import PinningVector, PolymerCone, SeedSpec, cone_size

settings.register_profile(
    "repo", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("repo")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def seed():
    return SeedSpec(20240229)


def random_cone(rng, d, n, scale=1.0):
    return PolymerCone(d, n, tuple(scale * rng.standard_normal(cone_size(d, j)) for j in range(1, n + 1)))


def random_pinning(rng, n, scale=1.0):
    return PinningVector(scale * rng.standard_normal(n))


def rel_err(a, b):
    return abs(a - b) / max(1.0, abs(b))


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import VERDICTS
    except ImportError:
        return
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in VERDICTS:
            terminalreporter.write_line(line)
