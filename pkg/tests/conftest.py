import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cddaudit.cdd import decompose, make_scales  # noqa: E402
from cddaudit.synth import SynthSpec, lognormal_field  # noqa: E402

ACCEPTANCE_RESULTS = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_RESULTS:
        terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def small_volume():
    """32^3 lognormal field used by the intervention and audit tests."""
    return lognormal_field(SynthSpec((32, 32, 32), beta=-3.0, seed=11))


@pytest.fixture(scope="session")
def small_decomp(small_volume):
    """Six-channel decomposition of ``small_volume`` (ladder 1:1.5:6)."""
    return decompose(small_volume, make_scales(1.0, 1.5, 6))
