import sys

import numpy as np
import pytest

from pinlab.renewal import build_model
from pinlab.slowvar import SlowlyVaryingSpec


@pytest.fixture(scope="session")
def half_model():
    """alpha = 1/2, L = 1, table up to 4096."""
    return build_model(0.5, SlowlyVaryingSpec.trivial(1.0), 4096)


@pytest.fixture(scope="session")
def small_model():
    return build_model(0.5, SlowlyVaryingSpec.trivial(1.0), 256)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
