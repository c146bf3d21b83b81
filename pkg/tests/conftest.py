import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from bohmexit import GaussianPacketSpec, make_entangled_pair, make_gaussian

settings.register_profile("default", max_examples=30, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def gauss3d():
    """Free packet at the origin with sigma = 1 and k0 = (0, 0, 5)."""
    return make_gaussian(GaussianPacketSpec((0.0, 0.0, 0.0), (0.0, 0.0, 5.0), 1.0))


@pytest.fixture(scope="session")
def entangled_pm():
    """Symmetrised pair with momenta +-(0, 0, 3)."""
    a = GaussianPacketSpec((0.0, 0.0, 0.0), (0.0, 0.0, 3.0), 1.0)
    b = GaussianPacketSpec((0.0, 0.0, 0.0), (0.0, 0.0, -3.0), 1.0)
    return make_entangled_pair(a, b)


@pytest.fixture(scope="session")
def entangled_overlap():
    """Symmetrised pair whose momentum distributions overlap, so entanglement shows in the velocities."""
    a = GaussianPacketSpec((0.0, 0.0, 0.0), (0.5, 0.0, 3.0), 1.0)
    b = GaussianPacketSpec((0.0, 0.0, 0.0), (-0.5, 0.0, 3.0), 1.0)
    return make_entangled_pair(a, b)


@pytest.fixture(scope="session")
def product_pair():
    a = GaussianPacketSpec((0.0, 0.0, 0.0), (0.0, 0.0, 3.0), 1.0)
    b = GaussianPacketSpec((1.0, 0.0, 0.0), (0.0, 1.0, -3.0), (1.0, 1.5, 0.8))
    return make_entangled_pair(a, b, coeffs=(1.0, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


FREE_CONFIG = {"state": {"packets": [{"center": [0, 0, 0], "momentum": [0, 0, 5], "width": 1.0}]},
               "detector": {"partition": "standard26"}, "ensemble": {"n": 10000, "seed": 1}}


@pytest.fixture(scope="session")
def free_sweep():
    """Standard free-Gaussian run at R = 50, 100, 200 (n = 10^4, 26 patches)."""
    from bohmexit.harness import from_dict, sweep_R

    return sweep_R(from_dict(FREE_CONFIG), [50.0, 100.0, 200.0], out_dir=False)


def pytest_terminal_summary(terminalreporter):
    import helpers

    if not helpers.ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(helpers.ACCEPTANCE):
        terminalreporter.write_line(helpers.ACCEPTANCE[number])
