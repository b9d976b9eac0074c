import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def plus_state(d: int = 2) -> np.ndarray:
    return np.full((d, d), 1 / d, dtype=complex)


# acceptance results, one entry per criterion, printed after the run
ACCEPTANCE: dict = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, line = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d} {line}")
