"""Shared fixtures: converged profiles and (optionally cached) simulation traces.

Simulations are the expensive part of the suite.  Setting the environment
variable NLSBLOWUP_TRACE_CACHE to a directory stores finished traces there
as trace files and reuses them on later runs.
"""

import os
from pathlib import Path

import pytest

from nlsblowup import io as nio
from nlsblowup import simulator
from nlsblowup.profile import ProblemParams, continue_in_parameter, solve_from_estimates

CACHE_ENV = "NLSBLOWUP_TRACE_CACHE"


def cached_run(tag, u0, config, q_reference=None):
    """simulator.run, memoized on disk when the cache variable is set."""
    cache = os.environ.get(CACHE_ENV)
    path = None
    if cache:
        path = Path(cache) / f"{tag}.csv"
        if path.exists():
            trace = nio.read_trace(path)
            if trace.config == config:
                return trace
    trace = simulator.run(u0, config, q_reference)
    if path is not None:
        path.parent.mkdir(parents=True, exist_ok=True)
        nio.write_trace(path, trace)
    return trace


@pytest.fixture(scope="session")
def cubic3d():
    return solve_from_estimates(ProblemParams(3, 1), 0.917, 1.885)


@pytest.fixture(scope="session")
def quintic2d():
    return solve_from_estimates(ProblemParams(2, 2), 1.533, 1.287)


@pytest.fixture(scope="session")
def quintic_family(quintic2d):
    """Converged quintic profiles at d = 2, 3, 4, 5 from one continuation."""
    record = continue_in_parameter(quintic2d, ProblemParams(5, 2), step=0.1)
    out = {}
    for sol in record.solutions:
        d = round(sol.params.d, 9)
        if d in (2, 3, 4, 5):
            out[int(d)] = sol
    return out


@pytest.fixture(scope="session")
def cubic_family(cubic3d):
    """Converged cubic profiles at d = 3, 4, 5."""
    record = continue_in_parameter(cubic3d, ProblemParams(5, 1), step=0.1)
    out = {}
    for sol in record.solutions:
        d = round(sol.params.d, 9)
        if d in (3, 4, 5):
            out[int(d)] = sol
    return out


# --- acceptance report ---------------------------------------------------------

_CRITERIA = {}


def record_criterion(number, ok, detail):
    line = f"CRITERION {number:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    _CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[number])
