import pytest

from schottky_zeta.congruence import congruence_context
from schottky_zeta.moebius import example_group
from schottky_zeta.pressure import bowen_dimension, build_orbit_table


@pytest.fixture(scope="session")
def g():
    return example_group()


@pytest.fixture(scope="session")
def table(g):
    """Orbit table to depth 8 with residues mod 3 and 5."""
    return build_orbit_table(g, 8, qs=(3, 5))


@pytest.fixture(scope="session")
def delta(table):
    return bowen_dimension(table).delta


@pytest.fixture(scope="session")
def ctx3(g):
    return congruence_context(g, 3)


@pytest.fixture(scope="session")
def ctx5(g):
    return congruence_context(g, 5)


# ------------------------------------------------- acceptance reporting

_RESULTS = pytest.StashKey[dict]()
N_CRITERIA = 11


def pytest_configure(config):
    config.stash[_RESULTS] = {}


@pytest.fixture
def criterion(request):
    """``criterion(k, ok, detail)`` records and prints one acceptance line."""

    def record(k: int, ok: bool, detail: str) -> bool:
        line = f"CRITERION {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash[_RESULTS][k] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    res = config.stash[_RESULTS]
    if not res:
        return
    terminalreporter.section("acceptance criteria")
    for k in range(1, N_CRITERIA + 1):
        terminalreporter.write_line(res.get(k, f"CRITERION {k:2d}: FAIL  (did not complete)"))
