import numpy as np
import pytest

from ramantm.grid import default_time_grid, hg_basis
from ramantm.memory import MemoryParams


@pytest.fixture(scope="session")
def params():
    return MemoryParams()


@pytest.fixture(scope="session")
def grid():
    return default_time_grid()


@pytest.fixture(scope="session")
def hg5(grid):
    return hg_basis(5, grid)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def acceptance_report(request):
    """Collects one summary line per acceptance criterion."""
    return request.config.stash.setdefault(_ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
