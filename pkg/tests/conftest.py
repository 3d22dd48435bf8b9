import functools
import os

import pytest
from hypothesis import HealthCheck, settings

from wrinklelab.solver import SolveOptions, solve

settings.register_profile(
    "default", max_examples=25, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.register_profile("ci", max_examples=100, deadline=None)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))


@functools.lru_cache(maxsize=None)
def cached_solve(L: float, N: int = 128, restarts: int = 1):
    """Solves shared across test modules of one session."""
    return solve(L, N, SolveOptions(restarts=restarts))


@pytest.fixture(scope="session")
def solved():
    return cached_solve


_ACCEPTANCE = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion and return the verdict."""

    def record(number: int, name: str, passed: bool, detail: str = "") -> bool:
        line = f"criterion {number:>2} {name}: {'PASS' if passed else 'FAIL'}  {detail}".rstrip()
        print(line)
        request.config.stash[_ACCEPTANCE].append((number, line))
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for _, line in sorted(lines, key=lambda t: t[0]):
            terminalreporter.write_line(line)
