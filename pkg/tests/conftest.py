import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sonoholo.core import MediumConfig, ParticleConfig
from sonoholo.geometry import preset_board
from sonoholo.propagators import PistonModel

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def medium():
    return MediumConfig()


@pytest.fixture(scope="session")
def particle():
    return ParticleConfig()


@pytest.fixture(scope="session")
def wavelength(medium):
    return medium.wavelength


@pytest.fixture(scope="session")
def bottom():
    return preset_board("bottom")


@pytest.fixture(scope="session")
def bottom_model(bottom, medium):
    return PistonModel(bottom, medium)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        yield


_CRITERIA = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line; ``report(ok, detail)`` prints and returns ``ok``."""

    def report(number: int, title: str, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _CRITERIA.append((number, line))
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_CRITERIA):
            terminalreporter.write_line(line)
