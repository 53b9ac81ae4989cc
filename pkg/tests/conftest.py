import numpy as np
import pytest

from momsplit.problems import build_qp


@pytest.fixture(scope="session")
def qp50():
    """Seeded random QP with ``N = 40`` primal and ``q = 10`` dual variables."""
    inst, triple = build_qp(20, 10, seed=7)
    return inst, triple


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_CRITERIA = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_CRITERIA] = {}


class _Recorder:
    def __init__(self, store, number, title):
        self.store, self.number, self.title = store, number, title
        self.notes = []

    def note(self, text):
        self.notes.append(text)

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is None:
            status = "PASS"
        elif issubclass(exc_type, pytest.skip.Exception):
            status = "SKIP"
            self.notes.append(str(exc))
        else:
            status = "FAIL"
            self.notes.append(f"{exc_type.__name__}: {str(exc).splitlines()[0] if str(exc) else ''}")
        self.store[self.number] = (status, self.title, "; ".join(self.notes))
        return False


@pytest.fixture
def criterion(request):
    """``with criterion(n, title) as c:`` records one acceptance line."""
    store = request.config.stash[_CRITERIA]
    return lambda number, title: _Recorder(store, number, title)


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash.get(_CRITERIA, {})
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(store):
        status, title, notes = store[n]
        line = f"[{status}] criterion {n}: {title}"
        if notes:
            line += f" ({notes})"
        terminalreporter.write_line(line)
