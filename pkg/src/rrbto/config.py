"""Flat key-value run configuration (TOML syntax).

Every key is optional; omitted keys take the defaults below.  ``beta`` and
``epsilon`` accept a number or a list; ``run`` requires single values and
``sweep`` runs the Cartesian product.
"""
from __future__ import annotations

import dataclasses
import itertools
import sys
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import benchmarks, fem
from .random_field import CovarianceSpec
from .sora import RrbtoConfig


class ConfigError(ValueError):
    pass


MC_MODES = ("full", "surrogate", "none")

TEMPLATE = """\
# Benchmark: "cantilever", "lbeam" or "custom".
benchmark = "cantilever"
# Mesh size in elements (lbeam uses nelx only, as the side of the square).
nelx = 60
nely = 20
# Volume fraction V/V0 (dimensionless).  Not published for the benchmarks;
# 0.55 is a calibrated value (see README).
gamma = 0.55
# Minimum allowable |u_B| (length units); defaults to 220 / 130 per benchmark.
# u0 = 220.0
# Target reliability index (number or list) and robust weight (number or list).
beta = 1.0
epsilon = [1.0, 0.9, 0.8, 0.5, 0.2, 0.0]
# SIMP exponent, filter radius (elements), sparse-grid level, KL terms.
penal = 3.0
r_min = 1.5
level = 4
n_terms = 2
# Correlation lengths (element units, or fractions of the domain edges when
# normalized_corr = true) and uniform modulus bounds (a, b).
corr_length_x = 0.6
corr_length_y = 0.6
normalized_corr = false
modulus_bounds = [1.0, 1.5]
# Tolerances and budgets.
mma_tol = 1e-3
mpp_tol = 1e-3
max_mma = 200
max_sora = 20
# Monte Carlo validation: mode "full", "surrogate" or "none".
mc_samples = 50000
mc_seed = 0
mc_mode = "full"
output = "results"
"""


@dataclasses.dataclass(frozen=True)
class RunSpec:
    benchmark: str = "cantilever"
    nelx: int | None = None
    nely: int | None = None
    load_a_ix: int | None = None
    load_b_ix: int | None = None
    gamma: float = benchmarks.DEFAULT_GAMMA
    u0: float | None = None
    # custom benchmark only
    fixed_dofs: tuple = ()
    loads: tuple = ()
    monitored_dof: int | None = None
    passive_elements: tuple = ()
    betas: tuple = (1.0,)
    epsilons: tuple = (1.0,)
    penal: float = 3.0
    r_min: float = 1.5
    level: int = 4
    n_terms: int = 2
    corr_length_x: float = 0.6
    corr_length_y: float = 0.6
    normalized_corr: bool = False
    modulus_bounds: tuple = (1.0, 1.5)
    mma_tol: float = 1e-3
    mpp_tol: float = 1e-3
    max_mma: int = 200
    max_sora: int = 20
    hmv_tol: float = 1e-4
    hmv_max_iter: int = 100
    objective_scale: float = 1000.0
    mu_star: float | None = None
    sigma_star: float | None = None
    mc_samples: int = 50000
    mc_seed: int = 0
    mc_mode: str = "full"
    output: Path = Path("results")

    def __post_init__(self):
        if self.benchmark not in (*benchmarks.BENCHMARKS, "custom"):
            raise ConfigError(f"unknown benchmark {self.benchmark!r}")
        if not self.betas or not self.epsilons:
            raise ConfigError("beta and epsilon lists must not be empty")
        if self.mc_mode not in MC_MODES:
            raise ConfigError(f"mc_mode must be one of {MC_MODES}")
        if self.mc_samples < 1:
            raise ConfigError("mc_samples must be >= 1")
        if len(self.modulus_bounds) != 2:
            raise ConfigError("modulus_bounds needs two values")

    def problem(self) -> fem.ProblemDef:
        try:
            if self.benchmark == "cantilever":
                kw = {k: getattr(self, k) for k in ("nelx", "nely", "load_a_ix", "load_b_ix", "u0")
                      if getattr(self, k) is not None}
                return benchmarks.cantilever(gamma=self.gamma, **kw)
            if self.benchmark == "lbeam":
                kw = {"n": self.nelx} if self.nelx is not None else {}
                if self.u0 is not None:
                    kw["u0"] = self.u0
                return benchmarks.lbeam(gamma=self.gamma, **kw)
            return self._custom_problem()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def _custom_problem(self) -> fem.ProblemDef:
        if None in (self.nelx, self.nely, self.monitored_dof, self.u0) or not self.loads:
            raise ConfigError("custom benchmark needs nelx, nely, fixed_dofs, loads, "
                              "monitored_dof and u0")
        passive = None
        if self.passive_elements:
            passive = np.zeros(self.nelx * self.nely, dtype=bool)
            passive[list(self.passive_elements)] = True
        return fem.ProblemDef(nelx=self.nelx, nely=self.nely, fixed_dofs=list(self.fixed_dofs),
                              loads=tuple(tuple(l) for l in self.loads),
                              monitored_dof=self.monitored_dof, gamma=self.gamma, u0=self.u0,
                              passive_mask=passive, name="custom")

    def cases(self) -> list[tuple[float, float]]:
        """(beta, epsilon) pairs in sweep order."""
        return list(itertools.product(self.betas, self.epsilons))

    def rrbto_config(self, beta: float, epsilon: float, problem=None) -> RrbtoConfig:
        try:
            return RrbtoConfig(
                problem=self.problem() if problem is None else problem,
                beta=float(beta), epsilon=float(epsilon),
                covariance=CovarianceSpec(self.corr_length_x, self.corr_length_y,
                                          self.normalized_corr),
                n_terms=self.n_terms, bounds=tuple(float(v) for v in self.modulus_bounds),
                penal=self.penal, r_min=self.r_min, level=self.level, mma_tol=self.mma_tol,
                mpp_tol=self.mpp_tol, max_mma=self.max_mma, max_sora=self.max_sora,
                hmv_tol=self.hmv_tol, hmv_max_iter=self.hmv_max_iter,
                objective_scale=self.objective_scale, mu_star=self.mu_star,
                sigma_star=self.sigma_star)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


_FIELDS = {f.name: f for f in dataclasses.fields(RunSpec)}
_LIST_KEYS = {"beta": "betas", "epsilon": "epsilons"}


def _as_tuple(value):
    return tuple(value) if isinstance(value, (list, tuple)) else (value,)


def spec_from_mapping(data: dict) -> RunSpec:
    kwargs = {}
    for key, value in data.items():
        if isinstance(value, dict):
            raise ConfigError(f"nested table [{key}] is not allowed; the format is flat")
        name = _LIST_KEYS.get(key, key)
        if name not in _FIELDS or key in ("betas", "epsilons"):
            raise ConfigError(f"unknown configuration key {key!r}")
        if name in ("betas", "epsilons", "fixed_dofs", "loads", "passive_elements",
                    "modulus_bounds"):
            value = _as_tuple(value)
        elif name == "output":
            value = Path(value)
        kwargs[name] = value
    try:
        return RunSpec(**kwargs)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_spec(path) -> RunSpec:
    path = Path(path)
    try:
        with path.open("rb") as fh:
            data = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return spec_from_mapping(data)
