"""The two benchmark problems: a short cantilever and an L-shaped beam."""
from __future__ import annotations

import numpy as np

from .fem import ProblemDef, dof_x, dof_y

BENCHMARKS = ("cantilever", "lbeam")
# The volume fraction is not published; 0.55 keeps the displacement constraint
# active for mean-dominated objectives and inactive for std-dominated ones.
DEFAULT_GAMMA = 0.55


def cantilever(nelx: int = 60, nely: int = 20, load_a_ix: int | None = None,
               load_b_ix: int | None = None, gamma: float = DEFAULT_GAMMA,
               u0: float = 220.0) -> ProblemDef:
    """Left edge clamped; unit downward loads at bottom-edge points A and B.

    A defaults to the bottom midpoint, B to the bottom-right corner; the
    vertical displacement of B is monitored.
    """
    a = nelx // 2 if load_a_ix is None else load_a_ix
    b = nelx if load_b_ix is None else load_b_ix
    if not (0 < a <= nelx and 0 < b <= nelx):
        raise ValueError("load points must lie on the unsupported part of the bottom edge")
    fixed = [d for iy in range(nely + 1) for d in (dof_x(nely, 0, iy), dof_y(nely, 0, iy))]
    loads = [(dof_y(nely, a, nely), -1.0)]
    if b == a:
        loads = [(dof_y(nely, a, nely), -2.0)]
    else:
        loads.append((dof_y(nely, b, nely), -1.0))
    return ProblemDef(nelx=nelx, nely=nely, fixed_dofs=np.array(fixed), loads=tuple(loads),
                      monitored_dof=dof_y(nely, b, nely), gamma=gamma, u0=u0, name="cantilever")


def lbeam(n: int = 60, gamma: float = DEFAULT_GAMMA, u0: float = 130.0) -> ProblemDef:
    """Square domain with the top-right quadrant passive.

    The top edge of the vertical leg is clamped.  Unit downward loads act at
    the bottom-right corner B and at A, a quarter of the bottom edge from B.
    """
    if n % 4:
        raise ValueError("the L-beam mesh size must be a multiple of 4")
    h = n // 2
    ix, iy = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    passive = ((ix >= h) & (iy < h)).ravel()
    fixed = [d for jx in range(h + 1) for d in (dof_x(n, jx, 0), dof_y(n, jx, 0))]
    a = n - n // 4
    loads = ((dof_y(n, a, n), -1.0), (dof_y(n, n, n), -1.0))
    return ProblemDef(nelx=n, nely=n, fixed_dofs=np.array(fixed), loads=loads,
                      monitored_dof=dof_y(n, n, n), gamma=gamma, u0=u0,
                      passive_mask=passive, name="lbeam")


def build_benchmark(name: str, **overrides) -> ProblemDef:
    if name == "cantilever":
        return cantilever(**overrides)
    if name == "lbeam":
        return lbeam(**overrides)
    raise ValueError(f"unknown benchmark {name!r}; choose from {', '.join(BENCHMARKS)}")
