"""Method of Moving Asymptotes.

Solves ``min f0(x)  s.t.  f_i(x) <= 0,  xmin <= x <= xmax`` by a sequence of
separable convex approximations (Svanberg, 1987).  Each subproblem is solved
with the primal-dual interior point scheme of Svanberg's reference MMA code,
with the usual artificial variables ``y_i`` (penalized by ``c_i``) that keep
the subproblem feasible when the linearized constraints are not.
"""
from __future__ import annotations

import dataclasses
import logging
from typing import Callable

import numpy as np

logger = logging.getLogger(__name__)


@dataclasses.dataclass
class ConstraintBundle:
    """Objective, ``<= 0`` constraints and their gradients at one design."""

    f0: float
    df0: np.ndarray
    g: np.ndarray
    dg: np.ndarray
    xmin: np.ndarray
    xmax: np.ndarray

    def __post_init__(self):
        self.df0 = np.asarray(self.df0, dtype=float).ravel()
        n = self.df0.size
        self.g = np.atleast_1d(np.asarray(self.g, dtype=float))
        self.dg = np.asarray(self.dg, dtype=float).reshape(self.g.size, n)
        self.xmin = np.broadcast_to(np.asarray(self.xmin, dtype=float), (n,)).copy()
        self.xmax = np.broadcast_to(np.asarray(self.xmax, dtype=float), (n,)).copy()

    def check_finite(self):
        for name in ("df0", "g", "dg"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite {name} passed to MMA")
        if not np.isfinite(self.f0):
            raise FloatingPointError("non-finite objective passed to MMA")


@dataclasses.dataclass
class MmaState:
    x: np.ndarray
    xold1: np.ndarray
    xold2: np.ndarray
    low: np.ndarray
    upp: np.ndarray
    iteration: int = 0
    move: float = 0.5
    asyinit: float = 0.5
    asyincr: float = 1.2
    asydecr: float = 0.7
    albefa: float = 0.1
    asymin: float = 1e-5
    asymax: float = 10.0
    raa0: float = 1e-5
    epsimin: float = 1e-9
    c: float = 1000.0
    # Multipliers of the last subproblem, kept for KKT checks.
    lam: np.ndarray | None = None
    xsi: np.ndarray | None = None
    eta: np.ndarray | None = None
    mu: np.ndarray | None = None
    s: np.ndarray | None = None
    y: np.ndarray | None = None
    z: float = 0.0
    zet: float = 0.0
    subproblem_residual: float = np.nan

    @classmethod
    def start(cls, x0, xmin=0.0, xmax=1.0, **params) -> "MmaState":
        x0 = np.asarray(x0, dtype=float).copy()
        lo = np.broadcast_to(xmin, x0.shape)
        hi = np.broadcast_to(xmax, x0.shape)
        return cls(x=x0, xold1=x0.copy(), xold2=x0.copy(), low=lo.copy(), upp=hi.copy(), **params)


def _subsolv(m, n, epsimin, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d):
    """Primal-dual Newton solve of the MMA subproblem (dense in m, diagonal in n)."""
    een = np.ones(n)
    eem = np.ones(m)
    epsi = 1.0
    x = 0.5 * (alfa + beta)
    y = eem.copy()
    z = 1.0
    lam = eem.copy()
    xsi = np.maximum(een / (x - alfa), een)
    eta = np.maximum(een / (beta - x), een)
    mu = np.maximum(eem, 0.5 * c)
    zet = 1.0
    s = eem.copy()

    def residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi):
        ux1 = upp - x
        xl1 = x - low
        plam = p0 + lam @ P
        qlam = q0 + lam @ Q
        gvec = P @ (1 / ux1) + Q @ (1 / xl1)
        dpsidx = plam / ux1**2 - qlam / xl1**2
        return np.concatenate([
            dpsidx - xsi + eta,
            c + d * y - mu - lam,
            [a0 - zet - a @ lam],
            gvec - a * z - y + s - b,
            xsi * (x - alfa) - epsi,
            eta * (beta - x) - epsi,
            mu * y - epsi,
            [zet * z - epsi],
            lam * s - epsi,
        ])

    while epsi > epsimin:
        res = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
        residunorm = np.linalg.norm(res)
        residumax = np.max(np.abs(res))
        ittt = 0
        while residumax > 0.9 * epsi and ittt < 200:
            ittt += 1
            ux1 = upp - x
            xl1 = x - low
            ux2 = ux1**2
            xl2 = xl1**2
            uxinv1 = 1 / ux1
            xlinv1 = 1 / xl1
            plam = p0 + lam @ P
            qlam = q0 + lam @ Q
            gvec = P @ uxinv1 + Q @ xlinv1
            GG = P / ux2 - Q / xl2
            dpsidx = plam / ux2 - qlam / xl2
            delx = dpsidx - epsi / (x - alfa) + epsi / (beta - x)
            dely = c + d * y - lam - epsi / y
            delz = a0 - a @ lam - epsi / z
            dellam = gvec - a * z - y - b + epsi / lam
            diagx = 2 * (plam / (ux2 * ux1) + qlam / (xl2 * xl1)) + xsi / (x - alfa) + eta / (beta - x)
            diagy = d + mu / y
            diaglamyi = s / lam + 1 / diagy
            blam = dellam + dely / diagy - GG @ (delx / diagx)
            Alam = np.diag(diaglamyi) + (GG / diagx) @ GG.T
            AA = np.block([[Alam, a[:, None]], [a[None, :], np.array([[-zet / z]])]])
            solut = np.linalg.solve(AA, np.concatenate([blam, [delz]]))
            dlam = solut[:m]
            dz = solut[m]
            dx = -delx / diagx - (dlam @ GG) / diagx
            dy = -dely / diagy + dlam / diagy
            dxsi = -xsi + epsi / (x - alfa) - xsi * dx / (x - alfa)
            deta = -eta + epsi / (beta - x) + eta * dx / (beta - x)
            dmu = -mu + epsi / y - mu * dy / y
            dzet = -zet + epsi / z - zet * dz / z
            ds = -s + epsi / lam - s * dlam / lam

            xx = np.concatenate([y, [z], lam, xsi, eta, mu, [zet], s])
            dxx = np.concatenate([dy, [dz], dlam, dxsi, deta, dmu, [dzet], ds])
            stmxx = np.max(-1.01 * dxx / xx)
            stmalfa = np.max(-1.01 * dx / (x - alfa))
            stmbeta = np.max(1.01 * dx / (beta - x))
            steg = 1.0 / max(stmalfa, stmbeta, stmxx, 1.0)

            old = (x, y, z, lam, xsi, eta, mu, zet, s)
            step = (dx, dy, dz, dlam, dxsi, deta, dmu, dzet, ds)
            itto = 0
            resinew = 2 * residunorm
            while resinew > residunorm and itto < 50:
                itto += 1
                x, y, z, lam, xsi, eta, mu, zet, s = (o + steg * dd for o, dd in zip(old, step))
                res = residual(x, y, z, lam, xsi, eta, mu, zet, s, epsi)
                resinew = np.linalg.norm(res)
                steg /= 2
            residunorm = resinew
            residumax = np.max(np.abs(res))
        epsi *= 0.1
    return x, y, z, lam, xsi, eta, mu, zet, s, residumax


def mma_step(state: MmaState, bundle: ConstraintBundle):
    """One MMA iteration from ``state.x``; returns ``(x_new, state)``."""
    bundle.check_finite()
    x = state.x
    if not (np.all(x >= bundle.xmin - 1e-12) and np.all(x <= bundle.xmax + 1e-12)):
        raise ValueError("current design lies outside the box bounds")
    n = x.size
    xmin, xmax = bundle.xmin, bundle.xmax
    g, dg = bundle.g, bundle.dg
    if g.size == 0:
        # Inactive dummy constraint keeps the dual system non-empty.
        g, dg = np.array([-1.0]), np.zeros((1, n))
    m = g.size
    k = state.iteration + 1
    span = xmax - xmin

    if k <= 2:
        low = x - state.asyinit * span
        upp = x + state.asyinit * span
    else:
        zzz = (x - state.xold1) * (state.xold1 - state.xold2)
        factor = np.ones(n)
        factor[zzz > 0] = state.asyincr
        factor[zzz < 0] = state.asydecr
        low = x - factor * (state.xold1 - state.low)
        upp = x + factor * (state.upp - state.xold1)
        low = np.clip(low, x - state.asymax * span, x - state.asymin * span)
        upp = np.clip(upp, x + state.asymin * span, x + state.asymax * span)

    alfa = np.maximum.reduce([low + state.albefa * (x - low), x - state.move * span, xmin])
    beta = np.minimum.reduce([upp - state.albefa * (upp - x), x + state.move * span, xmax])

    xmamiinv = 1.0 / np.maximum(span, 1e-5)
    ux2 = (upp - x) ** 2
    xl2 = (x - low) ** 2
    df0 = bundle.df0
    p0 = np.maximum(df0, 0)
    q0 = np.maximum(-df0, 0)
    pq0 = 0.001 * (p0 + q0) + state.raa0 * xmamiinv
    p0 = (p0 + pq0) * ux2
    q0 = (q0 + pq0) * xl2
    P = np.maximum(dg, 0)
    Q = np.maximum(-dg, 0)
    PQ = 0.001 * (P + Q) + state.raa0 * xmamiinv
    P = (P + PQ) * ux2
    Q = (Q + PQ) * xl2
    b = P @ (1 / (upp - x)) + Q @ (1 / (x - low)) - g

    a0 = 1.0
    a = np.zeros(m)
    c = np.full(m, state.c)
    d = np.ones(m)
    xnew, y, z, lam, xsi, eta, mu, zet, s, resmax = _subsolv(
        m, n, state.epsimin, low, upp, alfa, beta, p0, q0, P, Q, a0, a, b, c, d)
    xnew = np.clip(xnew, xmin, xmax)

    new_state = dataclasses.replace(
        state, x=xnew, xold1=x.copy(), xold2=state.xold1.copy(), low=low, upp=upp,
        iteration=k, lam=lam, xsi=xsi, eta=eta, mu=mu, s=s, y=y, z=z, zet=zet,
        subproblem_residual=float(resmax))
    return xnew, new_state


def kkt_residual(x, bundle: ConstraintBundle, state: MmaState) -> float:
    """Max-norm KKT residual of the original problem at ``x``.

    Constraint multipliers come from the last subproblem; stationarity is
    measured by the projected Lagrangian gradient so box bounds are handled
    exactly.
    """
    m = bundle.g.size
    lam = state.lam[:m] if m else np.zeros(0)
    grad = bundle.df0 + lam @ bundle.dg
    stationarity = x - np.clip(x - grad, bundle.xmin, bundle.xmax)
    parts = [stationarity, np.maximum(bundle.g, 0.0), lam * bundle.g, np.minimum(lam, 0.0)]
    return float(np.max(np.abs(np.concatenate(parts))))


@dataclasses.dataclass
class MmaResult:
    x: np.ndarray
    history: list
    iterations: int
    converged: bool
    state: MmaState | None = None


def run_to_convergence(x0, evaluator: Callable[[np.ndarray], ConstraintBundle], tol=1e-3,
                       max_iter=200, callback=None, **params) -> MmaResult:
    """Iterate MMA until the max design change is at most ``tol`` or ``max_iter`` is reached.

    ``history`` holds one record per evaluated design: objective, constraint
    values and the design change produced by the step taken from it.
    """
    x = np.asarray(x0, dtype=float).copy()
    history = []
    if max_iter <= 0:
        return MmaResult(x=x, history=history, iterations=0, converged=False)
    state = None
    converged = False
    for it in range(max_iter):
        bundle = evaluator(x)
        if state is None:
            state = MmaState.start(x, bundle.xmin, bundle.xmax, **params)
        x_new, state = mma_step(state, bundle)
        change = float(np.max(np.abs(x_new - x))) if x.size else 0.0
        record = {"iteration": it + 1, "f0": float(bundle.f0),
                  "g": bundle.g.tolist(), "change": change}
        history.append(record)
        if callback is not None:
            callback(record, x)
        logger.debug("mma it %3d f0 %.6e g %s change %.2e", it + 1, bundle.f0, bundle.g, change)
        x = x_new
        if change <= tol:
            converged = True
            break
    return MmaResult(x=x, history=history, iterations=len(history), converged=converged, state=state)
