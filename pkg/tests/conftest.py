import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from qtimedelay.hilbert import Grid, WavepacketSpec, make_wavepacket

settings.register_profile("default", max_examples=25, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[k])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def grid1():
    return Grid(1, 1024, 1.0)


def packet(grid, center, lo, hi, sigma=None):
    """Normalised compact-momentum packet (1D helper)."""
    if sigma is None:
        sigma = (hi - lo) / 12
    return make_wavepacket(grid, WavepacketSpec((center,), (lo,), (hi,), sigma_p=sigma))
