"""Stochastic response surface: cubic Hermite chaos in two standard normal variables.

The surface is fitted by least squares at 17 collocation points picked
from the roots of the next-higher Hermite polynomial, closest to the origin
first.
"""
from __future__ import annotations

import dataclasses
import itertools

import numpy as np

N_VARS = 2
DEGREE = 3
BASIS_LABELS = ("1", "a1", "a2", "a1^2-1", "a2^2-1", "a1*a2",
                "a1^3-3a1", "a2^3-3a2", "a1*a2^2-a1", "a1^2*a2-a2")
N_TERMS = len(BASIS_LABELS)
N_COLLOCATION = 17


class SrsmError(RuntimeError):
    pass


def hermite_design_matrix(points) -> np.ndarray:
    """Rows of the 10 basis functions at each point; ``points`` is (N, 2)."""
    p = np.atleast_2d(np.asarray(points, dtype=float))
    a1, a2 = p[:, 0], p[:, 1]
    one = np.ones_like(a1)
    return np.stack([one, a1, a2, a1**2 - 1, a2**2 - 1, a1 * a2,
                     a1**3 - 3 * a1, a2**3 - 3 * a2, a1 * a2**2 - a1, a1**2 * a2 - a2], axis=1)


def hermite_design_gradient(point) -> np.ndarray:
    """(10, 2) matrix of basis gradients at one point."""
    a1, a2 = (float(v) for v in point)
    return np.array([
        [0.0, 0.0],
        [1.0, 0.0],
        [0.0, 1.0],
        [2 * a1, 0.0],
        [0.0, 2 * a2],
        [a2, a1],
        [3 * a1**2 - 3, 0.0],
        [0.0, 3 * a2**2 - 3],
        [a2**2 - 1, 2 * a1 * a2],
        [2 * a1 * a2, a1**2 - 1],
    ])


def he4_roots() -> np.ndarray:
    """Roots of He4(a) = a^4 - 6a^2 + 3, ascending."""
    r1, r2 = np.sqrt(3 - np.sqrt(6)), np.sqrt(3 + np.sqrt(6))
    return np.array([-r2, -r1, r1, r2])


def collocation_points(n: int = N_VARS, p: int = DEGREE) -> np.ndarray:
    """The 17 highest-density points of ``{0, roots of He4}^2``.

    Points are ranked by squared radius.  Ties are broken by antipodal
    pairs: each pair is keyed by the polar angle in ``[0, pi)`` of its
    member in the upper half plane, and that member precedes its mirror
    image.  Every prefix of whole pairs is therefore symmetric under
    negation.
    """
    if (n, p) != (N_VARS, DEGREE):
        raise NotImplementedError("only n = 2 variables with degree p = 3 are supported")
    levels = np.concatenate([[0.0], he4_roots()])

    def key(pt):
        r2 = round(pt[0] ** 2 + pt[1] ** 2, 12)
        ang = np.arctan2(pt[1], pt[0])
        upper = 0 <= ang < np.pi - 1e-12 or (pt[1] == 0 and pt[0] > 0)
        pair_angle = ang if upper else ang + np.pi
        return (r2, round(pair_angle % np.pi, 12), 0 if upper else 1)

    cands = sorted(itertools.product(levels, repeat=2), key=key)
    pts = np.array(cands[:N_COLLOCATION], dtype=float)
    pts[pts == 0] = 0.0
    A = hermite_design_matrix(pts)
    if np.linalg.matrix_rank(A) < N_TERMS:
        raise SrsmError("collocation design matrix is rank deficient")
    return pts


@dataclasses.dataclass(frozen=True, eq=False)
class ResponseSurface:
    coefficients: np.ndarray  # (10,)
    residual_rms: float = 0.0
    condition_number: float = 1.0

    def __post_init__(self):
        c = np.asarray(self.coefficients, dtype=float).ravel()
        if c.size != N_TERMS:
            raise ValueError(f"expected {N_TERMS} coefficients, got {c.size}")
        if not np.all(np.isfinite(c)):
            raise SrsmError("non-finite response surface coefficients")
        object.__setattr__(self, "coefficients", c)

    @property
    def mean(self) -> float:
        return float(self.coefficients[0])

    @property
    def variance(self) -> float:
        """Exact variance under standard normal inputs (basis norms 1,1,1,2,2,1,6,6,2,2)."""
        norms = np.array([0, 1, 1, 2, 2, 1, 6, 6, 2, 2], dtype=float)
        return float(norms @ self.coefficients**2)

    def __call__(self, alpha) -> np.ndarray:
        """Vectorized value at (N, 2) points."""
        return hermite_design_matrix(alpha) @ self.coefficients


def fit(points, observations) -> ResponseSurface:
    """Least-squares coefficients of the 10-term basis."""
    A = hermite_design_matrix(points)
    z = np.asarray(observations, dtype=float).ravel()
    if A.shape[0] != z.size:
        raise ValueError("one observation per point is required")
    if A.shape[0] < N_TERMS:
        raise SrsmError(f"at least {N_TERMS} points are needed, got {A.shape[0]}")
    sv = np.linalg.svd(A, compute_uv=False)
    if sv[-1] <= sv[0] * A.shape[0] * np.finfo(float).eps:
        raise SrsmError("collocation design matrix is rank deficient")
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    resid = A @ coef - z
    return ResponseSurface(coef, residual_rms=float(np.sqrt(np.mean(resid**2))),
                           condition_number=float(sv[0] / sv[-1]))


def evaluate(surface: ResponseSurface, alpha):
    """Value and gradient of the surface at one point."""
    alpha = np.asarray(alpha, dtype=float).ravel()
    z = float(hermite_design_matrix(alpha)[0] @ surface.coefficients)
    grad = surface.coefficients @ hermite_design_gradient(alpha)
    return z, grad
