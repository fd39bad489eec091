"""Latin hypercube Monte Carlo validation of optimized designs."""
from __future__ import annotations

import dataclasses

import numpy as np
import scipy.special

from . import fem, random_field, srsm

MODES = ("full", "surrogate")


@dataclasses.dataclass(frozen=True)
class LhsSampler:
    """Latin hypercube design in standard normal space.

    Uses numpy's Philox counter-based generator, so a seed gives the same
    samples on every platform.
    """

    n: int = 50000
    dim: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.n < 1 or self.dim < 1:
            raise ValueError("sample count and dimension must be >= 1")

    def uniforms(self) -> np.ndarray:
        """(n, dim) stratified uniforms, one per interval ``[k/n, (k+1)/n)`` in each column."""
        rng = np.random.Generator(np.random.Philox(self.seed))
        cols = []
        for _ in range(self.dim):
            strata = rng.permutation(self.n)
            cols.append((strata + rng.random(self.n)) / self.n)
        u = np.stack(cols, axis=1)
        return np.clip(u, np.finfo(float).tiny, None)


def lhs_sample(sampler: LhsSampler) -> np.ndarray:
    """(n, dim) standard normal LHS samples."""
    return scipy.special.ndtri(sampler.uniforms())


class _Moments:
    """Streaming mean/variance (Chan et al. pairwise update), fed in fixed chunk order."""

    def __init__(self):
        self.n = 0
        self.mean = 0.0
        self.m2 = 0.0

    def add(self, values):
        v = np.asarray(values, dtype=float)
        if v.size == 0:
            return
        n_b, mean_b = v.size, float(v.mean())
        m2_b = float(np.sum((v - mean_b) ** 2))
        n = self.n + n_b
        delta = mean_b - self.mean
        self.mean += delta * n_b / n
        self.m2 += m2_b + delta**2 * self.n * n_b / n
        self.n = n

    @property
    def std(self) -> float:
        return float(np.sqrt(self.m2 / (self.n - 1))) if self.n > 1 else 0.0


@dataclasses.dataclass(frozen=True)
class McReport:
    pf: float
    mu_B: float
    sigma_B: float
    mu_C: float
    sigma_C: float
    n: int
    mode: str
    n_failed: int = 0

    @property
    def flagged(self) -> bool:
        return self.n_failed > 0

    @property
    def se_pf(self) -> float:
        return float(np.sqrt(self.pf * (1 - self.pf) / self.n))

    @property
    def se_mu_B(self) -> float:
        return self.sigma_B / np.sqrt(self.n)

    @property
    def se_mu_C(self) -> float:
        return self.sigma_C / np.sqrt(self.n) if np.isfinite(self.sigma_C) else np.nan


def _chunks(n, size):
    return [(s, min(s + size, n)) for s in range(0, n, size)]


def validate_design(problem: fem.ProblemDef, kl: random_field.KlModel, physical_density,
                    sampler: LhsSampler = LhsSampler(), mode: str = "full",
                    surface: srsm.ResponseSurface | None = None, penal: float = 3.0,
                    chunk: int = 512, mapper=map) -> McReport:
    """Failure probability and response moments over LHS samples of the KL variables.

    ``mode="full"`` solves the finite element model at every sample;
    ``mode="surrogate"`` evaluates ``surface`` for the monitored displacement
    and leaves the compliance moments undefined (NaN).  Failure means
    ``|u_B| < u0``.
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    xi = lhs_sample(sampler)
    if xi.shape[1] != kl.n_terms:
        raise ValueError("sampler dimension must match the number of KL terms")
    u0 = problem.u0
    acc_B, acc_C = _Moments(), _Moments()
    n_fail_state = 0
    n_failed = 0
    if mode == "surrogate":
        if surface is None:
            raise ValueError("surrogate mode needs a response surface")
        for a, b in _chunks(sampler.n, chunk):
            z = surface(xi[a:b])
            acc_B.add(z)
            n_fail_state += int(np.count_nonzero(np.abs(z) < u0))
        return McReport(pf=n_fail_state / sampler.n, mu_B=acc_B.mean, sigma_B=acc_B.std,
                        mu_C=np.nan, sigma_C=np.nan, n=sampler.n, mode=mode)

    phys = np.asarray(physical_density, dtype=float)
    stiff = phys**penal
    snapshots = None
    if kl.n_terms == srsm.N_VARS:
        snapshots = random_field.realize_modulus(kl, srsm.collocation_points()) * stiff
    solver = fem.BatchedSolver(problem, stiff * random_field.realize_modulus(kl, np.zeros(kl.n_terms)),
                               snapshot_moduli=snapshots)
    f = problem.load_vector()

    def run(bounds):
        a, b = bounds
        E = random_field.realize_modulus(kl, xi[a:b]) * stiff
        U, _, failed = solver.solve(E)
        return U[problem.monitored_dof], f @ U, failed

    for uB, C, failed in mapper(run, _chunks(sampler.n, chunk)):
        ok = ~failed
        n_failed += int(failed.sum())
        acc_B.add(uB[ok])
        acc_C.add(C[ok])
        n_fail_state += int(np.count_nonzero(np.abs(uB[ok]) < u0))
    n_ok = sampler.n - n_failed
    return McReport(pf=n_fail_state / max(n_ok, 1), mu_B=acc_B.mean, sigma_B=acc_B.std,
                    mu_C=acc_C.mean, sigma_C=acc_C.std, n=n_ok, mode=mode, n_failed=n_failed)
