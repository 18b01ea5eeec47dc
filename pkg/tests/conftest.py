import numpy as np
import pytest

from calvalid.geometry import CameraModel, Correspondence
from calvalid.sim import DEFAULT_THETA, SimConfig, gen_sets


@pytest.fixture(scope="session")
def ref_camera():
    return CameraModel(f_x=800.0, f_y=800.0, c_x=800.0, c_y=800.0, theta=DEFAULT_THETA,
                       t=(0.0, 0.0, 10.0))


@pytest.fixture(scope="session")
def noiseless_sets():
    cfg = SimConfig(sigma_d=0.0, sigma_3d=0.0, n_sets=6)
    return gen_sets(cfg)


@pytest.fixture(scope="session")
def default_sets():
    """First, middle and last of the default 56 sets."""
    return gen_sets(SimConfig(), indices=[0, 28, 55])


def exact_corrs(simset):
    return [Correspondence(x, X) for x, X in zip(simset.x_true, simset.X_true)]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
