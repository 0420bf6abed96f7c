from pathlib import Path

import pytest

DATA = Path(__file__).parent / "data"
SONAR = DATA / "sonar.csv"

_RESULTS = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def sonar_path():
    return SONAR


@pytest.fixture
def record_criterion(request):
    """Record ``(number, passed, detail)`` for the end-of-run acceptance table."""
    store = request.config.stash.setdefault(_RESULTS, {})

    def record(number, passed, detail):
        store[number] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_RESULTS, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(store):
        ok, detail = store[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
