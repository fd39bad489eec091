"""Gauss-Hermite rules, Smolyak sparse grids and robust compliance moments.

All rules integrate against the standard normal density, so weights sum
to one and ``sum(w * f(xi))`` approximates ``E[f(xi)]``.
"""
from __future__ import annotations

import dataclasses
import itertools
import warnings

import numpy as np

SIGMA2_EPS = 1e-12


class NegativeVarianceWarning(RuntimeWarning):
    pass


@dataclasses.dataclass(frozen=True, eq=False)
class Quad1D:
    level: int
    nodes: np.ndarray
    weights: np.ndarray


def gauss_hermite(n: int) -> Quad1D:
    """n-point Gauss-Hermite rule for the standard normal measure (exact to degree 2n-1)."""
    if n < 1:
        raise ValueError("a Gauss-Hermite rule needs at least one node")
    x, w = np.polynomial.hermite.hermgauss(n)
    nodes = np.sqrt(2.0) * x
    nodes[np.abs(nodes) < 1e-14] = 0.0
    return Quad1D(level=n, nodes=nodes, weights=w / np.sqrt(np.pi))


def linear_growth(level: int) -> int:
    return level


@dataclasses.dataclass(frozen=True, eq=False)
class SparseGrid:
    dim: int
    level: int
    nodes: np.ndarray  # (N, dim)
    weights: np.ndarray  # (N,), may contain negative entries

    def __len__(self):
        return self.weights.size

    def integrate(self, values) -> np.ndarray:
        return np.tensordot(self.weights, np.asarray(values, dtype=float), axes=(0, 0))


def _multi_indices(d, total_max):
    """All multi-indices with entries >= 1 and sum <= total_max, in lexicographic order."""
    for idx in itertools.product(range(1, total_max - d + 2), repeat=d):
        if sum(idx) <= total_max:
            yield idx


def smolyak(d: int, level: int, growth=linear_growth) -> SparseGrid:
    """Smolyak sparse grid built from tensor products of 1D difference rules.

    ``Q = sum_{|l| <= level + d - 1} (D_l1 x ... x D_ld)`` with
    ``D_k = Q_k - Q_{k-1}`` and ``Q_0 = 0``; ``growth(k)`` is the number of
    Gauss-Hermite nodes of the level-k rule.  Coinciding nodes are merged.
    """
    if d < 1 or level < 1:
        raise ValueError("dimension and level must be >= 1")
    rules = {k: gauss_hermite(growth(k)) for k in range(1, level + 1)}
    acc: dict[tuple, float] = {}
    for idx in _multi_indices(d, level + d - 1):
        # D_k expands to +Q_k and -Q_{k-1}; the latter vanishes for k = 1.
        terms = [[(1.0, rules[k])] + ([(-1.0, rules[k - 1])] if k > 1 else []) for k in idx]
        for combo in itertools.product(*terms):
            sign = np.prod([s for s, _ in combo])
            for pt in itertools.product(*[range(r.nodes.size) for _, r in combo]):
                node = tuple(round(float(r.nodes[i]), 12) + 0.0 for (_, r), i in zip(combo, pt))
                w = sign * np.prod([r.weights[i] for (_, r), i in zip(combo, pt)])
                acc[node] = acc.get(node, 0.0) + w
    keys = sorted(k for k, w in acc.items() if abs(w) > 1e-15)
    return SparseGrid(dim=d, level=level, nodes=np.array(keys, dtype=float),
                      weights=np.array([acc[k] for k in keys]))


def tensor_grid(d: int, n: int) -> SparseGrid:
    rule = gauss_hermite(n)
    nodes = np.array(list(itertools.product(rule.nodes, repeat=d)))
    weights = np.array([np.prod(w) for w in itertools.product(rule.weights, repeat=d)])
    return SparseGrid(dim=d, level=n, nodes=nodes, weights=weights)


@dataclasses.dataclass(frozen=True)
class Moments:
    mean: float
    variance: float
    dmean: np.ndarray
    dvariance: np.ndarray
    clamped: bool = False

    @property
    def std(self) -> float:
        return float(np.sqrt(self.variance))


def moments_from_samples(weights, values, grads) -> Moments:
    """Weighted mean/variance of ``values`` and their design gradients."""
    w = np.asarray(weights, dtype=float)
    C = np.asarray(values, dtype=float)
    dC = np.asarray(grads, dtype=float)
    mean = float(w @ C)
    variance = float(w @ C**2 - mean**2)
    dmean = w @ dC
    dvariance = 2.0 * (w * C) @ dC - 2.0 * mean * dmean
    clamped = False
    if variance < 0.0:
        if variance < -1e-9:
            warnings.warn(f"negative sparse-grid variance {variance:.3e} clamped to 0",
                          NegativeVarianceWarning, stacklevel=2)
        variance = 0.0
        clamped = True
    return Moments(mean, variance, dmean, dvariance, clamped)


def robust_moments(grid: SparseGrid, evaluator, mapper=map) -> Moments:
    """Mean and variance of ``C(xi)`` over the grid, with design gradients.

    ``evaluator(xi) -> (C, dC/drho)``; ``mapper`` may be an executor's
    ``map`` for concurrent node evaluations (results keep node order).
    """
    results = list(mapper(evaluator, list(grid.nodes)))
    values = np.array([r[0] for r in results], dtype=float)
    grads = np.array([np.asarray(r[1], dtype=float) for r in results])
    return moments_from_samples(grid.weights, values, grads)


def robust_objective_gradient(moments: Moments, k1: float, k2: float):
    """``k1 * mean + k2 * std`` and its gradient."""
    if k1 < 0 or k2 < 0:
        raise ValueError("robust weights must be non-negative")
    var = moments.variance
    sigma = np.sqrt(var)
    value = k1 * moments.mean + k2 * sigma
    grad = k1 * np.asarray(moments.dmean, dtype=float)
    if k2 != 0.0:
        denom = 2.0 * np.sqrt(var + SIGMA2_EPS if var < SIGMA2_EPS else var)
        grad = grad + k2 * np.asarray(moments.dvariance, dtype=float) / denom
    return float(value), grad
