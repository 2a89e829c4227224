import numpy as np
import pytest

from mfscramble.bogoliubov import LPropagator
from mfscramble.hartree import evolve
from mfscramble.presets import cfg_a, cfg_b, cfg_c

# (criterion, passed, detail) collected by the acceptance suite
ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in sorted(ACCEPTANCE_RESULTS, key=lambda r: int(r[0].split("-")[1])):
        terminalreporter.write_line(f"{name}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def preset_a():
    return cfg_a()


@pytest.fixture(scope="session")
def preset_b():
    return cfg_b()


@pytest.fixture(scope="session")
def preset_c():
    return cfg_c()


@pytest.fixture(scope="session")
def traj_a(preset_a):
    return evolve(preset_a.phi0, 5.0, preset_a.dt)


@pytest.fixture(scope="session")
def prop_a(traj_a):
    return LPropagator(traj_a)


@pytest.fixture(scope="session")
def traj_c(preset_c):
    return evolve(preset_c.phi0, 1.0, preset_c.dt)


@pytest.fixture(scope="session")
def prop_c(traj_c):
    return LPropagator(traj_c)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
