import functools

import pytest

from gchjb.grid import Grid, classify_nodes
from gchjb.solver import ProblemSpec, SolverConfig, sweep_solve
from gchjb.validation import fixture


@functools.lru_cache(maxsize=None)
def cached_fixture_solve(name, h):
    """Converged sweep solution of a named fixture, shared across test modules."""
    fx = fixture(name)
    grid = Grid.around(fx.descriptor, h, fx.dim)
    mask = classify_nodes(grid, fx.descriptor)
    return sweep_solve(fx.spec(), grid, mask, SolverConfig())


@functools.lru_cache(maxsize=None)
def cached_solve(descriptor, r, h, dim):
    grid = Grid.around(descriptor, h, dim)
    mask = classify_nodes(grid, descriptor)
    return sweep_solve(ProblemSpec(descriptor, r, 0.0, dim), grid, mask, SolverConfig())


@pytest.fixture
def fixture_solve():
    return cached_fixture_solve


@pytest.fixture
def solve():
    return cached_solve


#: verdict lines from test_acceptance.py, echoed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE):
            terminalreporter.write_line(line)
