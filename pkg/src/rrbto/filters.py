"""Density filter and SIMP interpolation."""
from __future__ import annotations

import dataclasses

import numpy as np
import scipy.sparse

RHO_MIN = 1e-3


@dataclasses.dataclass(frozen=True, eq=False)
class FilterKernel:
    """Linear cone filter ``w_ej = max(0, r_min - |x_e - x_j|)`` over element centroids."""

    nelx: int
    nely: int
    r_min: float
    H: scipy.sparse.csr_matrix
    Hs: np.ndarray

    @classmethod
    def build(cls, nelx: int, nely: int, r_min: float = 1.5) -> "FilterKernel":
        if r_min <= 0:
            raise ValueError("filter radius must be positive")
        reach = int(np.ceil(r_min)) - 1
        rows, cols, vals = [], [], []
        nel = nelx * nely
        idx = np.arange(nel)
        ix, iy = idx // nely, idx % nely
        # Unit-spaced centroids: grid offsets give the centroid distances.
        for dx in range(-reach, reach + 1):
            for dy in range(-reach, reach + 1):
                w = r_min - np.hypot(dx, dy)
                if w <= 0:
                    continue
                jx, jy = ix + dx, iy + dy
                ok = (jx >= 0) & (jx < nelx) & (jy >= 0) & (jy < nely)
                rows.append(idx[ok])
                cols.append((jx * nely + jy)[ok])
                vals.append(np.full(ok.sum(), w))
        H = scipy.sparse.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(nel, nel)).tocsr()
        return cls(nelx, nely, float(r_min), H, np.asarray(H.sum(axis=1)).ravel())

    @property
    def nel(self) -> int:
        return self.nelx * self.nely


def apply_filter(kernel: FilterKernel, rho: np.ndarray) -> np.ndarray:
    rho = np.asarray(rho, dtype=float)
    if rho.shape != (kernel.nel,):
        raise ValueError(f"expected {kernel.nel} densities, got shape {rho.shape}")
    return (kernel.H @ rho) / kernel.Hs


def backpropagate_sensitivity(kernel: FilterKernel, dF_dphys: np.ndarray) -> np.ndarray:
    """Chain rule through :func:`apply_filter` (its transpose)."""
    g = np.asarray(dF_dphys, dtype=float)
    if g.shape != (kernel.nel,):
        raise ValueError(f"expected {kernel.nel} sensitivities, got shape {g.shape}")
    return kernel.H.T @ (g / kernel.Hs)


def simp_moduli(physical_density, penal, moduli_unit):
    if penal < 1:
        raise ValueError("SIMP penalization must be >= 1")
    return np.asarray(physical_density, dtype=float) ** penal * np.asarray(moduli_unit, dtype=float)
