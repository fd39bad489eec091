"""Robust reliability-based topology optimization driven by SORA.

Each loop solves a deterministic topology problem whose reliability
constraint is evaluated at the previous most probable point, then runs one
inverse reliability analysis on a response surface fitted at the new design.
"""
from __future__ import annotations

import dataclasses
import functools
import logging

import numpy as np

from . import fem, filters, quadrature, random_field, reliability, srsm
from .mma import ConstraintBundle, run_to_convergence

logger = logging.getLogger(__name__)


@dataclasses.dataclass(frozen=True)
class RrbtoConfig:
    problem: fem.ProblemDef
    beta: float = 1.0
    epsilon: float = 1.0
    covariance: random_field.CovarianceSpec = random_field.CovarianceSpec()
    n_terms: int = 2
    bounds: tuple = (1.0, 1.5)
    penal: float = 3.0
    r_min: float = 1.5
    level: int = 4
    mma_tol: float = 1e-3
    mpp_tol: float = 1e-3
    max_mma: int = 200
    max_sora: int = 20
    hmv_tol: float = 1e-4
    hmv_max_iter: int = 100
    objective_scale: float = 1000.0  # objective value at the uniform start design
    mu_star: float | None = None  # None: compute by pre-runs
    sigma_star: float | None = None

    def __post_init__(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("epsilon must lie in [0, 1]")
        if not self.beta > 0:
            raise ValueError("beta must be positive")
        if self.max_mma < 1 or self.max_sora < 1:
            raise ValueError("iteration budgets must be >= 1")
        if self.n_terms != srsm.N_VARS:
            raise ValueError(f"the response surface needs exactly {srsm.N_VARS} KL terms")
        if not self.objective_scale > 0:
            raise ValueError("objective_scale must be positive")
        if self.penal < 1:
            raise ValueError("SIMP penalization must be >= 1")
        for name in ("mu_star", "sigma_star"):
            v = getattr(self, name)
            if v is not None and not v > 0:
                raise ValueError(f"{name} must be positive")

    @property
    def kappas(self) -> tuple[float, float]:
        if self.mu_star is None or self.sigma_star is None:
            raise ValueError("normalization constants are not set")
        return self.epsilon / self.mu_star, (1.0 - self.epsilon) / self.sigma_star


class RrbtoModel:
    """Design-independent data shared by every evaluation of one configuration."""

    def __init__(self, config: RrbtoConfig):
        p = config.problem
        self.config = config
        self.problem = p
        self.kl = random_field.build_kl_2d(
            config.covariance, (p.nelx, p.nely), fem.element_centroids(p.nelx, p.nely),
            M=config.n_terms, bounds=config.bounds)
        self.grid = quadrature.smolyak(config.n_terms, config.level)
        self.filter = filters.FilterKernel.build(p.nelx, p.nely, config.r_min)
        self.active = p.active
        self.passive = p.passive_mask
        self.grid_moduli = random_field.realize_modulus(self.kl, self.grid.nodes)
        self.collocation = srsm.collocation_points()
        self.collocation_moduli = random_field.realize_modulus(self.kl, self.collocation)

    def full_density(self, x) -> np.ndarray:
        rho = np.full(self.problem.nel, filters.RHO_MIN)
        rho[self.active] = x
        return rho

    def physical(self, x) -> np.ndarray:
        phys = filters.apply_filter(self.filter, self.full_density(x))
        phys[self.passive] = filters.RHO_MIN
        return phys

    def backprop(self, d_phys) -> np.ndarray:
        g = np.array(d_phys, dtype=float)
        g[self.passive] = 0.0
        return filters.backpropagate_sensitivity(self.filter, g)[self.active]

    def initial_design(self) -> np.ndarray:
        return np.full(self.active.size, self.problem.gamma)


@functools.lru_cache(maxsize=8)
def _model_cached(config: RrbtoConfig) -> RrbtoModel:
    return RrbtoModel(config)


def model_for(config: RrbtoConfig) -> RrbtoModel:
    # The model does not depend on the objective weights or normalization.
    key = dataclasses.replace(config, epsilon=1.0, beta=1.0, mu_star=None, sigma_star=None)
    return _model_cached(key)


def compliance_at(model: RrbtoModel, phys, moduli_unit, penal):
    """Compliance, its gradient w.r.t. physical densities, and the monitored displacement."""
    res = fem.assemble_and_solve(model.problem, filters.simp_moduli(phys, penal, moduli_unit))
    dC = fem.compliance_sensitivity(model.problem, moduli_unit, phys, penal, res.u)
    return res, dC


def robust_moments_at(model: RrbtoModel, phys, penal, mapper=map) -> quadrature.Moments:
    """Compliance moments over the sparse grid; ``mapper`` may run nodes concurrently."""
    def node(i):
        res, dC = compliance_at(model, phys, model.grid_moduli[i], penal)
        return res.compliance, dC

    results = list(mapper(node, range(len(model.grid))))
    return quadrature.moments_from_samples(model.grid.weights, [r[0] for r in results],
                                           [r[1] for r in results])


@dataclasses.dataclass(frozen=True)
class Weights:
    """Objective ``(k1 * mu + k2 * sigma) / scale``."""

    k1: float
    k2: float
    scale: float = 1.0


def limit_state_value(model: RrbtoModel, phys, penal, xi):
    """Normalized ``(u0 - |u_B(xi)|) / u0 <= 0`` and its physical-density gradient."""
    p = model.problem
    E = random_field.realize_modulus(model.kl, np.asarray(xi, dtype=float))
    res = fem.assemble_and_solve(p, filters.simp_moduli(phys, penal, E))
    du = fem.displacement_sensitivity(p, E, phys, penal, res.u, factor=res.factor)
    return (p.u0 - abs(res.u_B)) / p.u0, -np.sign(res.u_B) * du / p.u0, res.u_B


def dto_evaluator(model: RrbtoModel, weights: Weights, xi_star, mapper=map):
    """Objective and constraints of the deterministic subproblem as an MMA callback.

    Constraints, all ``<= 0``: the volume equality as two inequalities, then
    the limit state at ``xi_star``.
    """
    cfg = model.config
    p = model.problem
    n_active = model.active.size
    dvol = np.zeros(p.nel)
    dvol[model.active] = 1.0 / (p.gamma * n_active)
    dvol_x = model.backprop(dvol)

    def evaluate(x) -> ConstraintBundle:
        phys = model.physical(x)
        mom = robust_moments_at(model, phys, cfg.penal, mapper)
        f0, df0 = quadrature.robust_objective_gradient(mom, weights.k1, weights.k2)
        g_ls, dg_ls, _ = limit_state_value(model, phys, cfg.penal, xi_star)
        vol = phys[model.active].mean() / p.gamma - 1.0
        bundle = ConstraintBundle(
            f0=f0 / weights.scale, df0=model.backprop(df0) / weights.scale,
            g=np.array([vol, -vol, g_ls]),
            dg=np.vstack([dvol_x, -dvol_x, model.backprop(dg_ls)]),
            xmin=filters.RHO_MIN, xmax=1.0)
        bundle.check_finite()
        evaluate.last = (mom, g_ls)
        return bundle

    evaluate.last = None
    return evaluate


def fit_surface(model: RrbtoModel, phys, penal, mapper=map) -> srsm.ResponseSurface:
    def node(i):
        E = filters.simp_moduli(phys, penal, model.collocation_moduli[i])
        return fem.assemble_and_solve(model.problem, E).u_B

    obs = np.array(list(mapper(node, range(len(model.collocation)))))
    return srsm.fit(model.collocation, obs)


@dataclasses.dataclass(frozen=True)
class LoopRecord:
    loop: int
    design: np.ndarray  # active-element design densities
    xi_star: np.ndarray
    performance: float  # g at the new MPP (|u_B| - u0 via the surface)
    objective: float
    mean_compliance: float
    std_compliance: float
    mma_iterations: int
    mma_converged: bool
    mpp_iterations: int
    mpp_converged: bool
    surface: srsm.ResponseSurface


@dataclasses.dataclass
class SoraTrace:
    loops: list = dataclasses.field(default_factory=list)
    converged: bool = False

    @property
    def n_loops(self) -> int:
        return len(self.loops)

    @property
    def final(self) -> LoopRecord:
        return self.loops[-1]


@dataclasses.dataclass(frozen=True)
class DesignField:
    nelx: int
    nely: int
    density: np.ndarray  # design densities of all elements, passive at RHO_MIN
    physical: np.ndarray  # filtered densities
    passive_mask: np.ndarray

    def image(self) -> np.ndarray:
        """(nely, nelx) physical densities, top row first."""
        return self.physical.reshape(self.nelx, self.nely).T


def run_sora(config: RrbtoConfig, weights: tuple[float, float] | None = None, mapper=map,
             on_loop=None) -> tuple[DesignField, SoraTrace]:
    """SORA iterations until the MPP moves by at most ``mpp_tol`` (max-norm).

    ``weights`` = ``(k1, k2)`` overrides the normalized objective weights
    (the normalization pre-runs use ``(1, 0)`` and ``(0, 1)``).  The
    objective handed to MMA is rescaled to equal ``objective_scale`` at the
    uniform start design.  ``on_loop(record)`` is called after each loop.
    """
    model = model_for(config)
    k1, k2 = config.kappas if weights is None else weights
    x = model.initial_design()
    mom0 = robust_moments_at(model, model.physical(x), config.penal, mapper)
    f_start, _ = quadrature.robust_objective_gradient(mom0, k1, k2)
    scaled = Weights(k1, k2, (f_start if f_start > 0 else 1.0) / config.objective_scale)
    xi_star = np.zeros(config.n_terms)
    psi_prev = None
    trace = SoraTrace()
    for k in range(1, config.max_sora + 1):
        ev = dto_evaluator(model, scaled, xi_star, mapper)
        mma = run_to_convergence(x, ev, tol=config.mma_tol, max_iter=config.max_mma)
        x = mma.x
        phys = model.physical(x)
        mom = robust_moments_at(model, phys, config.penal, mapper)
        obj, _ = quadrature.robust_objective_gradient(mom, k1, k2)
        surface = fit_surface(model, phys, config.penal, mapper)
        ls = reliability.displacement_limit_state(surface, config.problem.u0)
        mpp = reliability.hmv_search(ls, config.beta, start=psi_prev, tol=config.hmv_tol,
                                     max_iter=config.hmv_max_iter, dim=config.n_terms)
        record = LoopRecord(
            loop=k, design=x.copy(), xi_star=mpp.xi.copy(), performance=float(mpp.value),
            objective=float(obj), mean_compliance=mom.mean, std_compliance=mom.std,
            mma_iterations=mma.iterations, mma_converged=mma.converged,
            mpp_iterations=mpp.iterations, mpp_converged=mpp.converged, surface=surface)
        trace.loops.append(record)
        logger.info("sora loop %d: mu %.4f sigma %.4f g* %.4e xi* %s mma %d",
                    k, mom.mean, mom.std, mpp.value, mpp.xi, mma.iterations)
        if on_loop is not None:
            on_loop(record)
        shift = float(np.max(np.abs(mpp.xi - xi_star)))
        xi_star = mpp.xi
        psi_prev = mpp.psi
        if shift <= config.mpp_tol:
            trace.converged = True
            break
    design = DesignField(config.problem.nelx, config.problem.nely, model.full_density(x),
                         model.physical(x), config.problem.passive_mask.copy())
    return design, trace


@dataclasses.dataclass
class Normalization:
    mu_star: float
    sigma_star: float
    mean_min: tuple  # (DesignField, SoraTrace) of the pure-mean run
    std_min: tuple  # (DesignField, SoraTrace) of the pure-std run


_NORMALIZATION_CACHE: dict = {}


def _normalization_key(config: RrbtoConfig):
    p = config.problem
    return (p.name, p.nelx, p.nely, p.gamma, p.u0, tuple(p.loads), p.monitored_dof,
            p.fixed_dofs.tobytes(), p.passive_mask.tobytes(),
            dataclasses.replace(config, epsilon=1.0, mu_star=None, sigma_star=None, problem=None))


def normalization_constants(config: RrbtoConfig, mapper=map) -> Normalization:
    """``mu*`` from the pure-std optimum and ``sigma*`` from the pure-mean optimum.

    Results are cached per problem, beta and random-field settings.
    """
    key = _normalization_key(config)
    if key in _NORMALIZATION_CACHE:
        return _NORMALIZATION_CACHE[key]
    mean_run = run_sora(config, (1.0, 0.0), mapper)
    std_run = run_sora(config, (0.0, 1.0), mapper)
    result = Normalization(mu_star=std_run[1].final.mean_compliance,
                           sigma_star=mean_run[1].final.std_compliance,
                           mean_min=mean_run, std_min=std_run)
    _NORMALIZATION_CACHE[key] = result
    return result


def run_rrbto(config: RrbtoConfig, mapper=map) -> tuple[DesignField, SoraTrace, RrbtoConfig]:
    """Normalize if needed, then optimize.

    For ``epsilon`` in {0, 1} the rescaled objective coincides with the
    pre-run objective, so the pre-run result is returned directly.
    """
    if config.mu_star is not None and config.sigma_star is not None:
        design, trace = run_sora(config, mapper=mapper)
        return design, trace, config
    norm = normalization_constants(config, mapper)
    config = dataclasses.replace(config, mu_star=norm.mu_star, sigma_star=norm.sigma_star)
    if config.epsilon == 1.0:
        return (*norm.mean_min, config)
    if config.epsilon == 0.0:
        return (*norm.std_min, config)
    design, trace = run_sora(config, mapper=mapper)
    return design, trace, config
