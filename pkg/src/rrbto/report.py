"""Side-by-side comparison of metric rows with published reference results."""
from __future__ import annotations

import dataclasses
import math

import numpy as np

from .artifacts import expected_pf

# (beta, epsilon) -> (muC, sigmaC, muB, sigmaB, Pf) from Monte Carlo on the published designs.
REFERENCE = {
    "cantilever": {
        (1.0, 1.0): (162.9505, 0.9263, -220.6120, 0.6071, 0.15674),
        (1.0, 0.9): (162.9992, 0.9188, -220.6070, 0.6017, 0.15642),
        (1.0, 0.8): (163.2204, 0.8953, -220.5980, 0.5853, 0.15326),
        (1.0, 0.5): (166.5160, 0.9032, -225.0110, 0.5906, 0.0),
        (1.0, 0.2): (177.7632, 0.8588, -240.6990, 0.5572, 0.0),
        (1.0, 0.0): (206.2317, 0.8559, -278.9100, 0.5527, 0.0),
        (2.0, 1.0): (163.4230, 0.9150, -221.1960, 0.5995, 0.02252),
        (2.0, 0.9): (163.6040, 0.9106, -221.1880, 0.5961, 0.02250),
        (2.0, 0.8): (163.7847, 0.9118, -221.1890, 0.5967, 0.02266),
        (2.0, 0.5): (164.7008, 0.8953, -222.9560, 0.5866, 0.0),
        (2.0, 0.2): (178.0176, 0.8586, -241.0670, 0.5570, 0.0),
        (2.0, 0.0): (206.2320, 0.8559, -278.9110, 0.5527, 0.0),
        (3.0, 1.0): (163.7490, 0.9094, -221.7690, 0.5962, 0.001340),
        (3.0, 0.9): (164.0019, 0.9078, -221.7630, 0.5944, 0.001340),
        (3.0, 0.8): (164.0458, 0.9015, -221.7520, 0.5907, 0.001320),
        (3.0, 0.5): (165.0556, 0.8938, -223.2560, 0.5855, 0.0),
        (3.0, 0.2): (177.8977, 0.8585, -240.8960, 0.5570, 0.0),
        (3.0, 0.0): (206.2320, 0.8559, -278.9110, 0.5527, 0.0),
    },
    "lbeam": {
        (1.0, 1.0): (96.4893, 0.5352, -130.3580, 0.3577, 0.15808),
        (1.0, 0.9): (96.3536, 0.5321, -130.3560, 0.3553, 0.15790),
        (1.0, 0.8): (96.8678, 0.5241, -131.0290, 0.3498, 0.00144),
        (1.0, 0.5): (99.5821, 0.5045, -135.7740, 0.3396, 0.0),
        (1.0, 0.2): (108.7352, 0.4917, -149.3090, 0.3332, 0.0),
        (1.0, 0.0): (133.3052, 0.4762, -183.8160, 0.3238, 0.0),
        (3.0, 1.0): (96.8866, 0.5300, -131.0510, 0.3544, 0.00130),
        (3.0, 0.9): (96.7519, 0.5298, -131.0510, 0.3545, 0.00126),
        (3.0, 0.8): (96.8852, 0.5240, -131.0560, 0.3497, 0.00106),
        (3.0, 0.5): (99.6087, 0.5049, -135.9450, 0.3399, 0.0),
        (3.0, 0.2): (108.7883, 0.4916, -149.3880, 0.3331, 0.0),
        (3.0, 0.0): (133.9731, 0.4755, -184.5450, 0.3229, 0.0),
    },
}
REFERENCE_FIELDS = ("muC", "sigmaC", "muB", "sigmaB", "Pf_mcs")
EPS0_SPREAD_MAX = 0.005


def pf_bound(beta: float, n: int) -> float:
    """``Phi(-beta) + 2 SE`` at the target probability."""
    p = expected_pf(beta)
    return p + 2.0 * math.sqrt(p * (1.0 - p) / n)


@dataclasses.dataclass
class RowCheck:
    row: dict
    reference: tuple | None
    status: str  # PASS, FAIL or n/a
    notes: list


def check_rows(rows, n_samples: int = 50000) -> list[RowCheck]:
    """Reliability bound per row, lower bound for epsilon = 1, and the
    cross-beta agreement of epsilon = 0 designs."""
    checks = []
    for row in rows:
        notes, status = [], "n/a"
        pf, beta = row["Pf_mcs"], row["beta"]
        if np.isfinite(pf):
            status = "PASS"
            if pf > pf_bound(beta, n_samples):
                status = "FAIL"
                notes.append(f"Pf {pf:.5f} above Phi(-beta) {expected_pf(beta):.5f}")
            if row["epsilon"] == 1.0 and pf < 0.5 * expected_pf(beta):
                status = "FAIL"
                notes.append("epsilon = 1 design far inside the feasible region")
        checks.append(RowCheck(row, None, status, notes))
    eps0 = [c for c in checks if c.row["epsilon"] == 0.0]
    if len(eps0) > 1:
        mus = np.array([c.row["muC"] for c in eps0])
        spread = (mus.max() - mus.min()) / abs(mus.mean())
        if spread > EPS0_SPREAD_MAX:
            for c in eps0:
                c.status = "FAIL"
                c.notes.append(f"epsilon = 0 muC spread {100 * spread:.2f}% across beta")
    return checks


def attach_reference(checks, benchmark: str) -> None:
    table = REFERENCE.get(benchmark, {})
    for c in checks:
        c.reference = table.get((c.row["beta"], c.row["epsilon"]))


def _rel(ours, ref):
    if not np.isfinite(ours):
        return "   n/a"
    if ref == 0:
        return f"{ours - ref:+.1e}"
    return f"{100 * (ours - ref) / abs(ref):+6.1f}%"


def format_report(checks) -> str:
    head = f"{'beta':>4} {'eps':>4} " + " ".join(
        f"{name:>10} {'ref':>10} {'dev':>7}" for name in REFERENCE_FIELDS) + "  status"
    lines = [head, "-" * len(head)]
    for c in checks:
        r = c.row
        cells = []
        for i, name in enumerate(REFERENCE_FIELDS):
            ref = c.reference[i] if c.reference else float("nan")
            cells.append(f"{r[name]:>10.5g} {ref:>10.5g} "
                         f"{_rel(r[name], ref) if c.reference else '   n/a':>7}")
        line = f"{r['beta']:>4g} {r['epsilon']:>4g} " + " ".join(cells) + f"  {c.status}"
        if c.notes:
            line += "  (" + "; ".join(c.notes) + ")"
        lines.append(line)
    n_fail = sum(c.status == "FAIL" for c in checks)
    lines.append(f"{len(checks)} rows, {n_fail} flagged")
    return "\n".join(lines)
