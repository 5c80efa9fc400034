from __future__ import annotations

import pytest

from mfglab.grid import Grid
from mfglab.model import builtin_model
from mfglab.semigroup import HeatOperator
from mfglab.solver import solve_mfg

# criterion number -> (passed, detail); filled by test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(scope="session")
def congestion():
    return builtin_model("congestion")


@pytest.fixture(scope="session")
def free():
    return builtin_model("free")


@pytest.fixture(scope="session")
def grid256():
    return Grid(1, 8.0, 256)


@pytest.fixture(scope="session")
def heat256(grid256):
    return HeatOperator(grid256)


@pytest.fixture(scope="session")
def cong_sol(congestion, grid256):
    """Congestion model, n=256, M=50: the reference run of the solver tests."""
    return solve_mfg(congestion, grid256, 50, 1e-8, 200)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
