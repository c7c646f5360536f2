import numpy as np
import pytest

from lineagemix import kernels

ACCEPTANCE_LINES = []


@pytest.fixture(params=["numpy", "numba"])
def backend(request, monkeypatch):
    """Run a test once per kernel backend."""
    monkeypatch.setenv("LINEAGEMIX_DISABLE_NUMBA", "1" if request.param == "numpy" else "0")
    assert kernels.active().name == request.param
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def record_criterion():
    """Store one pass/fail line per acceptance criterion for the end-of-run summary."""

    def _record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'} | {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":").split(".")[0])):
            terminalreporter.write_line(line)
