import numpy as np
import pytest

from logmosaic.image_core import Raster
from logmosaic.synth import make_texture


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def textured():
    """96x80 smoothed-noise raster, deterministic."""
    return Raster(make_texture("smoothed_noise", 96, 80, np.random.default_rng(7)))


def pytest_terminal_summary(terminalreporter):
    try:
        from tests import test_acceptance as acc
    except ImportError:
        import test_acceptance as acc
    if acc.RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(acc.RESULTS):
            terminalreporter.write_line(acc.RESULTS[n])
