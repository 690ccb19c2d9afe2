import sys
import time
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from mabuchi_lab.geodesic import continuation  # noqa: E402
from mabuchi_lab.scenarios import builtin  # noqa: E402

ACCEPTANCE_LINES = {}


class Timed:
    def __init__(self, results, seconds, scenario):
        self.results = results
        self.seconds = seconds
        self.scenario = scenario

    def __iter__(self):
        return iter(self.results)

    def __getitem__(self, k):
        return self.results[k]

    def __len__(self):
        return len(self.results)


def _run(name):
    sc = builtin(name)
    _, grid, ep0, ep1 = sc.build()
    start = time.perf_counter()
    res = continuation(grid, ep0, ep1, sc.solver_config())
    return Timed(res, time.perf_counter() - start, sc)


@pytest.fixture(scope="session")
def rotation_ladder():
    """Sphere L = 8, 65 x 129 grid, ladder 1e-1 ... 1e-4."""
    return _run("sphere-rotation")


@pytest.fixture(scope="session")
def torus_shift():
    return _run("torus-shift")


@pytest.fixture(scope="session")
def torus_cosine():
    return _run("torus-cosine")


@pytest.fixture(scope="session")
def torus_zero():
    return _run("torus-zero")


@pytest.fixture(scope="session")
def rotation_report(rotation_ladder):
    from mabuchi_lab.analysis import convergence_report
    return convergence_report(list(rotation_ladder), rotation_ladder.scenario.exact_limit(), A=8.0)


@pytest.fixture
def criterion():
    """Record the one-line verdict of an acceptance criterion."""
    def record(n, ok, detail):
        ACCEPTANCE_LINES[n] = f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(ACCEPTANCE_LINES[n])
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
