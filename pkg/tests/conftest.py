import pytest

from momentum_tde.recipes import Bench

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def bench():
    """The rho=100 synthetic benchmark (C=20, N_max=500, dim=64) over seeds 0..4."""
    return Bench()


@pytest.fixture(scope="session")
def verdict():
    def record(number: int, title: str, ok: bool, detail: str):
        line = f"criterion {number:2d} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        ACCEPTANCE_LINES.append((number, line))
        print(line)
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
