import numpy as np
import pytest
from hypothesis import settings

from rrbto import benchmarks, fem

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def small_cantilever():
    """12 x 4 cantilever with the benchmark load layout; u0 = 20 keeps the limit state inactive."""
    return benchmarks.cantilever(nelx=12, nely=4, u0=20.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def central_difference(f, x, idx, h):
    xp, xm = x.copy(), x.copy()
    xp[idx] += h
    xm[idx] -= h
    return (f(xp) - f(xm)) / (2 * h)


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def fixed_left_edge(nelx, nely):
    return [d for iy in range(nely + 1) for d in (fem.dof_x(nely, 0, iy), fem.dof_y(nely, 0, iy))]


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
