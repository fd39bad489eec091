"""Karhunen-Loeve expansion of a Gaussian field with separable exponential covariance.

The 1D integral eigenproblem ``int K(s,t) e(t) dt = lambda e(s)`` is solved
by the Nystrom method on a midpoint grid.  The kernel has a derivative jump
on the diagonal, which limits the midpoint rule to O(h^2); eigenvalues are
therefore Richardson-extrapolated from grids of n and 2n points.  The 2D
eigenpairs are products of the 1D ones.

The truncated Gaussian field is mapped to Young's modulus through its
standard normal CDF and the inverse CDF of a uniform marginal on [a, b].
"""
from __future__ import annotations

import dataclasses

import numpy as np
import scipy.linalg
import scipy.special


class KLError(RuntimeError):
    pass


def exponential_kernel(s, t, corr_length):
    return np.exp(-np.abs(np.subtract.outer(s, t)) / corr_length)


@dataclasses.dataclass(frozen=True, eq=False)
class KL1D:
    """Eigenpairs of the 1D exponential kernel on ``[0, length]``."""

    length: float
    corr_length: float
    eigenvalues: np.ndarray
    nodes: np.ndarray
    weights: np.ndarray
    vectors: np.ndarray  # eigenfunction values at the nodes, (n, n_modes)
    grid_eigenvalues: np.ndarray  # un-extrapolated values on ``nodes``

    def __call__(self, x) -> np.ndarray:
        """Nystrom interpolation of the eigenfunctions at points ``x``; shape (len(x), n_modes)."""
        K = exponential_kernel(np.asarray(x, dtype=float), self.nodes, self.corr_length)
        return (K * self.weights) @ self.vectors / self.grid_eigenvalues

    def inner(self, f, g) -> float:
        return float(np.sum(self.weights * f * g))


def _nystrom(length, corr_length, n, n_modes):
    x = (np.arange(n) + 0.5) * (length / n)
    w = np.full(n, length / n)
    sw = np.sqrt(w)
    A = sw[:, None] * exponential_kernel(x, x, corr_length) * sw[None, :]
    k = min(n_modes, n)
    try:
        lam, v = scipy.linalg.eigh(A, subset_by_index=[n - k, n - 1], check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise KLError(f"Nystrom eigensolve failed: {exc}") from None
    lam, v = lam[::-1], v[:, ::-1]
    vec = v / sw[:, None]
    # Deterministic sign: positive at the left end (never zero for this kernel).
    vec *= np.where(vec[0] < 0, -1.0, 1.0)
    return x, w, lam, vec


def solve_kl_1d(length: float, corr_length: float, n_modes: int, n_points: int | None = None,
                richardson: bool = True) -> KL1D:
    """Leading eigenpairs of ``exp(-|s - t| / corr_length)`` on ``[0, length]``.

    ``n_points`` is the coarse grid size (default: at least 256 and 10 points
    per correlation length).  Eigenfunctions live on the fine grid of
    ``2 * n_points`` nodes and are L2-normalized under its quadrature.
    """
    if n_modes < 1:
        raise ValueError("n_modes must be >= 1")
    if length <= 0 or corr_length <= 0:
        raise ValueError("domain and correlation lengths must be positive")
    if n_points is None:
        n_points = max(256, int(np.ceil(10 * length / corr_length)))
    if not richardson:
        x, w, lam, vec = _nystrom(length, corr_length, n_points, n_modes)
        return KL1D(length, corr_length, lam, x, w, vec, lam)
    _, _, lam_c, _ = _nystrom(length, corr_length, n_points, n_modes)
    x, w, lam_f, vec = _nystrom(length, corr_length, 2 * n_points, n_modes)
    k = lam_c.size
    lam = lam_f.copy()
    lam[:k] = (4 * lam_f[:k] - lam_c) / 3
    if np.any(lam <= 0) or np.any(np.diff(lam) > 0):
        raise KLError("KL spectrum is not positive and descending; refine the grid")
    return KL1D(length, corr_length, lam, x, w, vec, lam_f)


@dataclasses.dataclass(frozen=True)
class CovarianceSpec:
    """Separable exponential covariance.

    With ``normalized=True`` each axis of the design domain is mapped to
    [0, 1] before the correlation lengths apply; otherwise lengths are in
    element units (the mesh has unit elements).
    """

    l1: float = 0.6
    l2: float = 0.6
    normalized: bool = False

    def __post_init__(self):
        if self.l1 <= 0 or self.l2 <= 0:
            raise ValueError("correlation lengths must be positive")


@dataclasses.dataclass(frozen=True, eq=False)
class KlModel:
    eigenvalues: np.ndarray  # (M,)
    table: np.ndarray  # eigenfunctions at element centroids, (nel, M)
    pairs: tuple  # (i, j) 1D mode indices of each 2D mode
    axes: tuple  # (KL1D along x, KL1D along y)
    bounds: tuple = (1.0, 1.5)
    marginal: str = "uniform"

    @property
    def n_terms(self) -> int:
        return self.eigenvalues.size

    @property
    def scaled_table(self) -> np.ndarray:
        return self.table * np.sqrt(self.eigenvalues)

    def field(self, xi) -> np.ndarray:
        """Gaussian field at the centroids; ``xi`` of shape (M,) or (N, M)."""
        return np.asarray(xi, dtype=float) @ self.scaled_table.T

    def pointwise_variance(self) -> np.ndarray:
        return self.table**2 @ self.eigenvalues


def build_kl_2d(cov: CovarianceSpec, extents, centroids, M: int = 2, bounds=(1.0, 1.5),
                marginal: str = "uniform", n_points: int | None = None) -> KlModel:
    """Top-M separable eigenpairs tabulated at the element centroids.

    ``extents`` are the domain side lengths and ``centroids`` the (nel, 2)
    coordinates, both in element units.
    """
    if M < 1:
        raise ValueError("M must be >= 1")
    a, b = bounds
    if not a <= b:
        raise ValueError("marginal bounds must satisfy a <= b")
    if marginal != "uniform":
        raise NotImplementedError(f"marginal {marginal!r} is not available; only 'uniform'")
    extents = np.asarray(extents, dtype=float)
    pts = np.asarray(centroids, dtype=float)
    if cov.normalized:
        pts = pts / extents
        extents = np.ones(2)
    kx = solve_kl_1d(extents[0], cov.l1, max(M, 2), n_points)
    if extents[1] == extents[0] and cov.l2 == cov.l1:
        ky = kx
    else:
        ky = solve_kl_1d(extents[1], cov.l2, max(M, 2), n_points)
    i, j = np.meshgrid(np.arange(kx.eigenvalues.size), np.arange(ky.eigenvalues.size), indexing="ij")
    i, j = i.ravel(), j.ravel()
    prod = kx.eigenvalues[i] * ky.eigenvalues[j]
    order = np.argsort(-prod, kind="stable")[:M]
    ex = kx(pts[:, 0])
    ey = ky(pts[:, 1])
    table = ex[:, i[order]] * ey[:, j[order]]
    return KlModel(eigenvalues=prod[order], table=table,
                   pairs=tuple(zip(i[order].tolist(), j[order].tolist())),
                   axes=(kx, ky), bounds=(float(a), float(b)), marginal=marginal)


def realize_modulus(model: KlModel, xi) -> np.ndarray:
    """Element Young's moduli ``a + (b - a) * Phi(y(xi))``; (nel,) or (N, nel)."""
    a, b = model.bounds
    return a + (b - a) * scipy.special.ndtr(model.field(xi))
