"""Plane-stress finite element analysis on a structured grid of unit Q4 elements.

Numbering follows the usual educational topology-optimization layout:

* nodes are numbered column by column, top to bottom:
  ``node = ix * (nely + 1) + iy`` with ``iy = 0`` on the top edge;
* each node carries two DOFs, ``2 * node`` (x) and ``2 * node + 1`` (y);
* elements are numbered the same way, ``elem = ix * nely + iy``;
* the physical y axis points *up*, so a downward load has a negative sign
  and produces a negative vertical displacement.

The reduced stiffness matrix (fixed DOFs removed) is banded with half
bandwidth ``2 * nely + 5``, so it is factorized with LAPACK's banded Cholesky.
"""
from __future__ import annotations

import dataclasses
import functools

import numpy as np
import scipy.linalg
import scipy.sparse

# Singular-system detection: a rigid-body mode shows up as a Cholesky pivot
# many orders of magnitude below the largest one.
_PIVOT_RATIO_MIN = 1e-13
_RESIDUAL_MAX = 1e-10
_REFINE_STEPS = 6


class FeaError(RuntimeError):
    """Raised when the reduced stiffness matrix cannot be factorized."""


def element_stiffness(poisson: float = 0.3) -> np.ndarray:
    """Unit-modulus stiffness of a unit square bilinear plane-stress element.

    Node order is lower-left, lower-right, upper-right, upper-left with DOFs
    interleaved ``(ux, uy)`` per node.
    """
    nu = float(poisson)
    if not 0.0 <= nu < 0.5:
        raise ValueError(f"Poisson's ratio must lie in [0, 0.5), got {nu}")
    k = np.array([
        1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
        -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8,
    ])
    pattern = np.array([
        [0, 1, 2, 3, 4, 5, 6, 7],
        [1, 0, 7, 6, 5, 4, 3, 2],
        [2, 7, 0, 5, 6, 3, 4, 1],
        [3, 6, 5, 0, 7, 2, 1, 4],
        [4, 5, 6, 7, 0, 1, 2, 3],
        [5, 4, 3, 2, 1, 0, 7, 6],
        [6, 3, 4, 1, 2, 7, 0, 5],
        [7, 2, 1, 4, 3, 6, 5, 0],
    ])
    return k[pattern] / (1 - nu**2)


def node_index(nely: int, ix: int, iy: int) -> int:
    """Global node number of grid point (ix, iy); iy counts down from the top."""
    return ix * (nely + 1) + iy


def dof_x(nely: int, ix: int, iy: int) -> int:
    return 2 * node_index(nely, ix, iy)


def dof_y(nely: int, ix: int, iy: int) -> int:
    return 2 * node_index(nely, ix, iy) + 1


def element_dofs(nelx: int, nely: int) -> np.ndarray:
    """(nel, 8) array of global DOFs per element in LL, LR, UR, UL order."""
    ix, iy = np.meshgrid(np.arange(nelx), np.arange(nely), indexing="ij")
    ix, iy = ix.ravel(), iy.ravel()
    ll = ix * (nely + 1) + iy + 1
    lr = (ix + 1) * (nely + 1) + iy + 1
    ur = (ix + 1) * (nely + 1) + iy
    ul = ix * (nely + 1) + iy
    nodes = np.stack([ll, lr, ur, ul], axis=1)
    return np.stack([2 * nodes, 2 * nodes + 1], axis=2).reshape(-1, 8)


def element_centroids(nelx: int, nely: int) -> np.ndarray:
    """(nel, 2) centroid coordinates with the origin at the lower-left corner."""
    ix, iy = np.meshgrid(np.arange(nelx), np.arange(nely), indexing="ij")
    return np.stack([ix.ravel() + 0.5, nely - iy.ravel() - 0.5], axis=1)


@dataclasses.dataclass(frozen=True, eq=False)
class ProblemDef:
    """Mesh, supports, loads and the monitored DOF of a 2D benchmark.

    ``loads`` holds ``(dof, magnitude)`` pairs; ``u0`` is the minimum
    allowable magnitude of the monitored displacement.
    """

    nelx: int
    nely: int
    fixed_dofs: np.ndarray
    loads: tuple
    monitored_dof: int
    gamma: float = 0.5
    u0: float = 1.0
    passive_mask: np.ndarray | None = None
    poisson: float = 0.3
    name: str = "custom"

    def __post_init__(self):
        fixed = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))
        object.__setattr__(self, "fixed_dofs", fixed)
        object.__setattr__(self, "loads", tuple((int(d), float(v)) for d, v in self.loads))
        if self.passive_mask is None:
            object.__setattr__(self, "passive_mask", np.zeros(self.nel, dtype=bool))
        else:
            mask = np.asarray(self.passive_mask, dtype=bool).ravel()
            if mask.size != self.nel:
                raise ValueError("passive_mask must have one flag per element")
            object.__setattr__(self, "passive_mask", mask)
        if self.nelx < 1 or self.nely < 1:
            raise ValueError("mesh needs at least one element per axis")
        if fixed.size == 0:
            raise ValueError("fixed_dofs must not be empty")
        if fixed.min() < 0 or fixed.max() >= self.ndof:
            raise ValueError("fixed DOF out of range")
        if not 0 <= self.monitored_dof < self.ndof:
            raise ValueError("monitored DOF out of range")
        if self.monitored_dof in set(fixed.tolist()):
            raise ValueError("monitored DOF is constrained")
        if any(not 0 <= d < self.ndof for d, _ in self.loads):
            raise ValueError("load DOF out of range")
        if not 0.0 < self.gamma <= 1.0:
            raise ValueError(f"volume fraction must lie in (0, 1], got {self.gamma}")
        if not self.u0 > 0.0:
            raise ValueError("u0 must be positive")

    @property
    def nel(self) -> int:
        return self.nelx * self.nely

    @property
    def ndof(self) -> int:
        return 2 * (self.nelx + 1) * (self.nely + 1)

    @property
    def active(self) -> np.ndarray:
        """Indices of design (non-passive) elements."""
        return np.flatnonzero(~self.passive_mask)

    def load_vector(self) -> np.ndarray:
        f = np.zeros(self.ndof)
        for dof, value in self.loads:
            f[dof] += value
        return f

    @functools.cached_property
    def assembly(self) -> "_BandedAssembly":
        return _BandedAssembly(self)


class _BandedAssembly:
    """Precomputed scatter map from element matrices into LAPACK upper band storage."""

    def __init__(self, problem: ProblemDef):
        self.k0 = element_stiffness(problem.poisson)
        self.edof = element_dofs(problem.nelx, problem.nely)
        ndof = problem.ndof
        free = np.setdiff1d(np.arange(ndof), problem.fixed_dofs)
        self.free = free
        self.n = free.size
        glob2free = np.full(ndof, -1, dtype=np.int64)
        glob2free[free] = np.arange(free.size)
        fe = glob2free[self.edof]  # (nel, 8)
        rows = np.repeat(fe, 8, axis=1)  # entry (a, b) -> row fe[a]
        cols = np.tile(fe, (1, 8))
        keep = (rows >= 0) & (cols >= 0) & (rows <= cols)
        self.bw = int(np.max(np.where(keep, cols - rows, 0)))
        flat = (self.bw + rows - cols) * self.n + cols
        self._elem, self._entry = np.nonzero(keep)
        self._flat = flat[keep]
        self._k0flat = self.k0.ravel()[self._entry]

    def banded(self, moduli: np.ndarray) -> np.ndarray:
        vals = moduli[self._elem] * self._k0flat
        ab = np.bincount(self._flat, weights=vals, minlength=(self.bw + 1) * self.n)
        return ab.reshape(self.bw + 1, self.n)

    def matvec(self, moduli: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Global K(moduli) @ u without forming K."""
        ue = u[self.edof]
        fe = (ue @ self.k0) * moduli[:, None]
        return np.bincount(self.edof.ravel(), weights=fe.ravel(), minlength=u.size)


class BandedCholesky:
    """Cholesky factor of the reduced stiffness matrix; solves full-length systems."""

    def __init__(self, assembly: _BandedAssembly, moduli: np.ndarray):
        self._asm = assembly
        self._moduli = moduli
        ab = assembly.banded(moduli)
        try:
            c = scipy.linalg.cholesky_banded(ab, overwrite_ab=True, check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise FeaError(f"reduced stiffness matrix is not positive definite: {exc}") from None
        pivots = c[-1]
        if not np.all(np.isfinite(pivots)):
            raise FeaError("non-finite entries in stiffness factorization")
        if pivots.min() ** 2 < _PIVOT_RATIO_MIN * pivots.max() ** 2:
            raise FeaError("reduced stiffness matrix is numerically singular "
                           "(insufficient supports?)")
        self._c = c

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve K x = rhs at free DOFs; fixed DOFs of x are zero."""
        return self.solve_refined(rhs)[0]

    def _solve_once(self, rhs_free):
        return scipy.linalg.cho_solve_banded((self._c, False), rhs_free, check_finite=False)

    def solve_refined(self, rhs: np.ndarray):
        """Solve with iterative refinement; returns ``(x, relative residual)``.

        Near-void elements make the matrix ill-conditioned (condition numbers
        around 1e13), so a single triangular solve can leave residuals well
        above the equilibrium tolerance; a few refinement sweeps remove them.
        """
        asm = self._asm
        free = asm.free
        x = np.zeros(rhs.shape[0])
        b = rhs[free]
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return x, 0.0
        x[free] = self._solve_once(b)
        residual = np.inf
        for _ in range(_REFINE_STEPS):
            r = b - asm.matvec(self._moduli, x)[free]
            residual = float(np.linalg.norm(r) / bnorm)
            if residual <= _RESIDUAL_MAX:
                break
            x[free] += self._solve_once(r)
        else:
            r = b - asm.matvec(self._moduli, x)[free]
            residual = float(np.linalg.norm(r) / bnorm)
        return x, residual


@dataclasses.dataclass(frozen=True)
class FeaResult:
    u: np.ndarray
    compliance: float
    u_B: float
    residual: float
    factor: BandedCholesky | None = dataclasses.field(default=None, repr=False)


def assemble_and_solve(problem: ProblemDef, moduli: np.ndarray) -> FeaResult:
    """Solve K(moduli) u = f for the per-element Young's moduli.

    Raises :class:`FeaError` for singular systems; the relative equilibrium
    residual at the free DOFs is returned alongside the solution.
    """
    moduli = np.asarray(moduli, dtype=float)
    if moduli.shape != (problem.nel,):
        raise ValueError(f"expected {problem.nel} moduli, got shape {moduli.shape}")
    if not np.all(moduli > 0) or not np.all(np.isfinite(moduli)):
        raise ValueError("element moduli must be positive and finite")
    f = problem.load_vector()
    factor = BandedCholesky(problem.assembly, moduli)
    u, residual = factor.solve_refined(f)
    if not residual <= _RESIDUAL_MAX:
        raise FeaError(f"equilibrium residual {residual:.2e} above {_RESIDUAL_MAX:.0e}")
    return FeaResult(u=u, compliance=float(f @ u), u_B=float(u[problem.monitored_dof]),
                     residual=residual, factor=factor)


def _check_lengths(problem, *arrays):
    for a in arrays:
        if np.shape(a) != (problem.nel,):
            raise ValueError(f"per-element vector must have length {problem.nel}")


def element_energy(problem: ProblemDef, u: np.ndarray, v: np.ndarray | None = None) -> np.ndarray:
    """Per-element ``u_e^T k0 v_e`` (``v`` defaults to ``u``)."""
    asm = problem.assembly
    ue = u[asm.edof]
    ve = ue if v is None else v[asm.edof]
    return np.einsum("ij,jk,ik->i", ue, asm.k0, ve)


def compliance_sensitivity(problem, moduli_unit, physical_density, penal, u):
    """dC/d(physical density) for SIMP moduli ``rho**p * E0``."""
    _check_lengths(problem, moduli_unit, physical_density)
    rho = np.asarray(physical_density, dtype=float)
    dE = penal * rho ** (penal - 1) * np.asarray(moduli_unit, dtype=float)
    return -dE * element_energy(problem, u)


def displacement_sensitivity(problem, moduli_unit, physical_density, penal, u, factor=None):
    """d u_B / d(physical density) by the adjoint method.

    ``factor`` is the stiffness factorization from the forward solve; when
    omitted the system is refactorized.
    """
    _check_lengths(problem, moduli_unit, physical_density)
    rho = np.asarray(physical_density, dtype=float)
    E0 = np.asarray(moduli_unit, dtype=float)
    if factor is None:
        factor = BandedCholesky(problem.assembly, rho**penal * E0)
    e_B = np.zeros(problem.ndof)
    e_B[problem.monitored_dof] = 1.0
    lam = factor.solve(e_B)
    dE = penal * rho ** (penal - 1) * E0
    return -dE * element_energy(problem, lam, u)


class BatchedSolver:
    """Solves ``K(E_b) u_b = f`` for many modulus vectors ``E_b`` at once.

    Conjugate gradients run on all right-hand sides together, preconditioned
    by the Cholesky factor of one reference stiffness matrix.  When the
    moduli stay close to the reference, a handful of iterations reach the
    equilibrium tolerance.  Columns that stall fall back to a direct solve.

    ``snapshot_moduli`` (k, nel) optionally seeds the iteration with the
    Galerkin projection onto the span of k direct solutions; the stiffness is
    linear in the moduli, so the reduced k-by-k systems cost ``O(nel k^2)``.
    """

    def __init__(self, problem: ProblemDef, reference_moduli, max_iter: int = 200,
                 snapshot_moduli=None):
        self.problem = problem
        self.asm = problem.assembly
        self.factor = BandedCholesky(self.asm, np.asarray(reference_moduli, dtype=float))
        self.max_iter = max_iter
        edof = self.asm.edof
        self._scatter = scipy.sparse.csr_matrix(
            (np.ones(edof.size), (edof.ravel(), np.arange(edof.size))),
            shape=(problem.ndof, edof.size))
        self._basis = None
        if snapshot_moduli is not None:
            self._build_basis(np.atleast_2d(np.asarray(snapshot_moduli, dtype=float)))

    def _build_basis(self, snapshot_moduli):
        asm = self.asm
        snaps = np.stack([assemble_and_solve(self.problem, E).u for E in snapshot_moduli], axis=1)
        q, r = np.linalg.qr(snaps[asm.free])
        d = np.abs(np.diag(r))
        q = q[:, d > d.max() * 1e-10]
        full = np.zeros((self.problem.ndof, q.shape[1]))
        full[asm.free] = q
        Qe = full[asm.edof]  # (nel, 8, k)
        self._basis = q
        self._blocks = np.einsum("eak,ab,ebl->ekl", Qe, asm.k0, Qe).reshape(asm.edof.shape[0], -1)
        self._reduced_load = q.T @ self.problem.load_vector()[asm.free]

    def _initial_guess(self, E, b):
        if self._basis is None:
            return self._precond(b)
        k = self._basis.shape[1]
        A = (E @ self._blocks).reshape(-1, k, k)
        c = np.linalg.solve(A, np.broadcast_to(self._reduced_load, (A.shape[0], k))[..., None])
        return self._basis @ c[..., 0].T

    def _matvec(self, moduli_t, U_free):
        """``K(E_b) u_b`` at the free DOFs for columns b; ``moduli_t`` is (nel, B)."""
        asm = self.asm
        full = np.zeros((self.problem.ndof, U_free.shape[1]))
        full[asm.free] = U_free
        Ue = full[asm.edof]  # (nel, 8, B)
        Fe = np.matmul(asm.k0, Ue) * moduli_t[:, None, :]
        return (self._scatter @ Fe.reshape(-1, U_free.shape[1]))[asm.free]

    def _precond(self, R):
        return scipy.linalg.cho_solve_banded((self.factor._c, False), R, check_finite=False)

    def solve(self, moduli) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Displacements ``(ndof, B)``, relative residuals ``(B,)`` and a failure mask.

        Failed columns (singular systems) are NaN.
        """
        E = np.atleast_2d(np.asarray(moduli, dtype=float))
        B = E.shape[0]
        free = self.asm.free
        f = self.problem.load_vector()[free]
        fnorm = np.linalg.norm(f)
        U = np.zeros((self.problem.ndof, B))
        resid = np.zeros(B)
        failed = np.zeros(B, dtype=bool)
        if fnorm == 0 or B == 0:
            return U, resid, failed
        Et = E.T
        b = np.repeat(f[:, None], B, axis=1)
        X = self._initial_guess(E, b)
        R = b - self._matvec(Et, X)
        active = np.arange(B)
        Z = self._precond(R)
        P = Z.copy()
        rz = np.einsum("ij,ij->j", R, Z)
        for _ in range(self.max_iter):
            rn = np.linalg.norm(R, axis=0) / fnorm
            keep = rn > 0.1 * _RESIDUAL_MAX
            if not keep.any():
                active = active[:0]
                break
            if not keep.all():
                active = active[keep]
                R, P, rz = R[:, keep], P[:, keep], rz[keep]
            Et_a = Et[:, active]
            KP = self._matvec(Et_a, P)
            alpha = rz / np.einsum("ij,ij->j", P, KP)
            X[:, active] += alpha * P
            R = R - alpha * KP
            Z = self._precond(R)
            rz_new = np.einsum("ij,ij->j", R, Z)
            P = Z + (rz_new / rz) * P
            rz = rz_new
        # True residuals; anything above tolerance is re-solved directly.
        true_r = np.linalg.norm(b - self._matvec(Et, X), axis=0) / fnorm
        U[free] = X
        resid[:] = true_r
        for j in np.flatnonzero(~(true_r <= _RESIDUAL_MAX)):
            try:
                res = assemble_and_solve(self.problem, E[j])
                U[:, j] = res.u
                resid[j] = res.residual
            except (FeaError, ValueError):
                U[:, j] = np.nan
                resid[j] = np.nan
                failed[j] = True
        return U, resid, failed
