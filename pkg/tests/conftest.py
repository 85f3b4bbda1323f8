import numpy as np
import pytest

from biwave.fields import SpatialGrid


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def ring():
    """256-point periodic grid on [0, 2pi): mode m has wavenumber m."""
    return SpatialGrid.from_interval(0.0, 2 * np.pi, 256)


@pytest.fixture
def line():
    return SpatialGrid.from_interval(-16.0, 16.0, 256)


@pytest.fixture
def box():
    return SpatialGrid.from_interval(-10.0, 10.0, 128, boundary="hard-wall")


ACCEPTANCE_LINES = []


@pytest.fixture
def criterion():
    """Record one acceptance line; the terminal summary prints them all."""
    def record(number, title, passed, detail):
        line = f"[{'PASS' if passed else 'FAIL'}] criterion {number:>2}: {title} ({detail})"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        return passed
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
