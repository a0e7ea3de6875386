import sys

import numpy as np
import pytest

from sketchflim import BiRanges, IrfSpec, MonoRanges, TimeAxis


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo the acceptance gate verdicts where output capture can't eat them."""
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "GATE_LINES", None) if mod else None
    if lines:
        terminalreporter.section("acceptance gate")
        for line in lines:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def axis():
    return TimeAxis.from_window(256, 10.0)


@pytest.fixture(scope="session")
def irf_spec():
    return IrfSpec(fwhm=0.1, peak_time=1.0)


@pytest.fixture(scope="session")
def mono_ranges():
    return MonoRanges(0.2, 8.0)


@pytest.fixture(scope="session")
def bi_ranges():
    return BiRanges(0.2, 2.0, 2.0, 8.0, 0.05, 0.95)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
