import numpy as np
import pytest

from nsemats.assembly import assemble_cavity
from nsemats.problems import setup_cavity


@pytest.fixture(scope="session")
def cavity4():
    return assemble_cavity(4)


@pytest.fixture(scope="session")
def cavity10():
    return assemble_cavity(10)


@pytest.fixture(scope="session")
def setup10():
    return setup_cavity(10, "distributed")


@pytest.fixture(scope="session")
def setup4():
    return setup_cavity(4, "distributed")


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


_ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """``criterion(num, label, ok, detail)`` records one acceptance check and
    asserts it."""
    results = request.config.stash.setdefault(_ACCEPTANCE, {})

    def record(num, label, ok, detail=""):
        results.setdefault(num, []).append((label, bool(ok), detail))
        assert ok, f"criterion {num} ({label}) failed: {detail}"

    return record


def pytest_terminal_summary(terminalreporter, config):
    results = config.stash.get(_ACCEPTANCE, None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(results):
        checks = results[num]
        status = "PASS" if all(ok for _, ok, _ in checks) else "FAIL"
        parts = "; ".join(f"{label}: {'ok' if ok else 'FAILED'}" + (f" ({detail})" if detail else "")
                          for label, ok, detail in checks)
        terminalreporter.write_line(f"criterion {num}: {status} - {parts}")
