"""Inverse reliability analysis with the performance measure approach.

The most probable point (MPP) minimizes the limit state ``g`` over the
sphere ``|psi| = beta`` in standard normal space.  It is found with the
hybrid mean value (HMV) method, which switches between the advanced mean
value update and a conjugate update according to a convexity indicator.
"""
from __future__ import annotations

import dataclasses
from typing import Callable

import numpy as np

from .srsm import ResponseSurface, evaluate


class ReliabilityError(RuntimeError):
    pass


@dataclasses.dataclass(frozen=True)
class LimitState:
    """``evaluator(psi) -> (g, grad g)``; failure when ``g < 0``."""

    evaluator: Callable
    description: str = ""
    u0: float | None = None

    def __call__(self, psi):
        g, grad = self.evaluator(np.asarray(psi, dtype=float))
        g = float(g)
        grad = np.asarray(grad, dtype=float).ravel()
        if not (np.isfinite(g) and np.all(np.isfinite(grad))):
            raise ReliabilityError(f"non-finite limit state at psi = {psi}")
        return g, grad


def displacement_limit_state(surface: ResponseSurface, u0: float) -> LimitState:
    """``g = |z(psi)| - u0`` with the response surface ``z`` of the monitored displacement."""

    def ev(psi):
        z, dz = evaluate(surface, psi)
        return abs(z) - u0, np.sign(z) * dz

    return LimitState(ev, description="|u_B| - u0", u0=u0)


@dataclasses.dataclass(frozen=True)
class MppResult:
    psi: np.ndarray
    value: float
    beta: float
    iterations: int
    converged: bool
    steps: tuple = ()  # "amv" or "cmv" per update

    @property
    def xi(self) -> np.ndarray:
        # KL variables are already standard normal: the transform is the identity.
        return self.psi


def _unit(v):
    norm = np.linalg.norm(v)
    if norm == 0.0 or not np.isfinite(norm):
        raise ReliabilityError("zero limit-state gradient: stationary point on the search path")
    return v / norm


def hmv_search(limit_state: LimitState, beta: float, start=None, tol: float = 1e-4,
               max_iter: int = 100, cos_tol: float = 1e-8, dim: int | None = None) -> MppResult:
    """Minimize ``g`` on ``|psi| = beta``.

    ``start`` seeds the search (rescaled onto the sphere); by default the
    seed is ``-beta * e1``.  With ``n`` the unit direction of the current
    iterate (``psi = -beta * n``) and ``n'`` the normalized gradient at it,
    the indicator ``<n_k - n_{k-1}, n' - n_k>`` selects the plain update
    ``n_{k+1} = n'`` when non-negative and the conjugate update
    ``n_{k+1} ~ n' + n_k + n_{k-1}`` otherwise.
    """
    if not beta > 0:
        raise ValueError("beta must be positive")
    if start is None:
        if dim is None:
            raise ValueError("either start or dim is required")
        n_cur = np.zeros(dim)
        n_cur[0] = 1.0
    else:
        s = np.asarray(start, dtype=float).ravel()
        n_cur = -s / np.linalg.norm(s) if np.linalg.norm(s) > 0 else np.eye(s.size)[0]
    n_prev = None
    psi = -beta * n_cur
    g, grad = limit_state(psi)
    steps = []
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        n_new = _unit(grad)
        step = "amv"
        if n_prev is not None and np.dot(n_cur - n_prev, n_new - n_cur) < 0:
            blend = n_new + n_cur + n_prev
            if np.linalg.norm(blend) > 1e-12:
                n_new = _unit(blend)
                step = "cmv"
        steps.append(step)
        psi_new = -beta * n_new
        cos = float(np.dot(n_new, n_cur))
        dpsi = float(np.linalg.norm(psi_new - psi))
        n_prev, n_cur, psi = n_cur, n_new, psi_new
        g, grad = limit_state(psi)
        if cos >= 1 - cos_tol or dpsi <= tol:
            converged = True
            break
    return MppResult(psi=psi, value=g, beta=float(beta), iterations=it,
                     converged=converged, steps=tuple(steps))


@dataclasses.dataclass(frozen=True)
class PerformanceMeasure:
    value: float
    reliable: bool
    converged: bool


def pma_constraint_value(mpp: MppResult) -> PerformanceMeasure:
    """``g`` at the MPP; the design is beta-reliable iff it is non-negative."""
    return PerformanceMeasure(value=float(mpp.value), reliable=bool(mpp.value >= 0),
                              converged=bool(mpp.converged))
