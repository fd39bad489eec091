"""On-disk outputs: graymap images, trace logs, design archives and metric rows."""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import numpy as np
import scipy.stats

from .sora import DesignField, SoraTrace
from .srsm import ResponseSurface

CSV_COLUMNS = ("beta", "expected_Pf", "epsilon", "muC", "sigmaC", "muB", "sigmaB", "Pf_mcs",
               "muB_srsm", "sigmaB_srsm", "loops", "converged")


def density_to_gray(image) -> np.ndarray:
    """Solid (1) maps to black (0), void to white (255)."""
    img = np.clip(np.asarray(image, dtype=float), 0.0, 1.0)
    return np.round(255.0 * (1.0 - img)).astype(np.uint8)


def write_pgm(path, image) -> None:
    """Binary P5 graymap, one pixel per element, row 0 at the top."""
    gray = density_to_gray(image)
    h, w = gray.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode("ascii"))
        fh.write(gray.tobytes())


def read_pgm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end].decode("ascii"))
        pos = end
    if fields[0] != "P5":
        raise ValueError("not a binary graymap")
    w, h, maxval = (int(v) for v in fields[1:])
    if maxval != 255:
        raise ValueError("only 8-bit graymaps are supported")
    pixels = np.frombuffer(data, dtype=np.uint8, count=w * h, offset=pos + 1)
    return pixels.reshape(h, w)


def _jsonable(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, (np.floating, np.integer, np.bool_)):
        return v.item()
    return v


def loop_entry(record) -> dict:
    return {
        "loop": record.loop,
        "xi_star": _jsonable(record.xi_star),
        "performance": record.performance,
        "objective": record.objective,
        "mean_compliance": record.mean_compliance,
        "std_compliance": record.std_compliance,
        "mma_iterations": record.mma_iterations,
        "mma_converged": record.mma_converged,
        "mpp_iterations": record.mpp_iterations,
        "mpp_converged": record.mpp_converged,
        "surface": _jsonable(record.surface.coefficients),
    }


def write_trace(path, trace: SoraTrace, header: dict | None = None) -> None:
    """Newline-delimited JSON: optional header, one line per loop, then a summary."""
    with open(path, "w") as fh:
        if header is not None:
            fh.write(json.dumps({"event": "start", **{k: _jsonable(v) for k, v in header.items()}})
                     + "\n")
        for record in trace.loops:
            fh.write(json.dumps({"event": "loop", **loop_entry(record)}) + "\n")
        fh.write(json.dumps({"event": "end", "loops": trace.n_loops,
                             "converged": trace.converged}) + "\n")


def read_trace(path) -> list[dict]:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def save_design(path, design: DesignField, surface: ResponseSurface, beta: float,
                epsilon: float) -> None:
    np.savez(path, nelx=design.nelx, nely=design.nely, density=design.density,
             physical=design.physical, passive_mask=design.passive_mask,
             surface=surface.coefficients, beta=beta, epsilon=epsilon)


def load_design(path) -> tuple[DesignField, ResponseSurface, float, float]:
    with np.load(path) as z:
        design = DesignField(int(z["nelx"]), int(z["nely"]), z["density"].copy(),
                             z["physical"].copy(), z["passive_mask"].copy())
        return design, ResponseSurface(z["surface"].copy()), float(z["beta"]), float(z["epsilon"])


def expected_pf(beta: float) -> float:
    return float(scipy.stats.norm.cdf(-beta))


def metrics_row(beta, epsilon, trace: SoraTrace, report=None) -> dict:
    """One table row.  Compliance moments come from the Monte Carlo report
    when it has them, else from the sparse grid at the final design."""
    final = trace.final
    nan = float("nan")
    muC, sigmaC = final.mean_compliance, final.std_compliance
    muB = sigmaB = pf = nan
    if report is not None:
        muB, sigmaB, pf = report.mu_B, report.sigma_B, report.pf
        if np.isfinite(report.mu_C):
            muC, sigmaC = report.mu_C, report.sigma_C
    return {
        "beta": float(beta), "expected_Pf": expected_pf(beta), "epsilon": float(epsilon),
        "muC": float(muC), "sigmaC": float(sigmaC), "muB": float(muB), "sigmaB": float(sigmaB),
        "Pf_mcs": float(pf), "muB_srsm": final.surface.mean,
        "sigmaB_srsm": float(np.sqrt(final.surface.variance)),
        "loops": trace.n_loops, "converged": bool(trace.converged),
    }


def _fmt(v):
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def format_rows(rows, header: bool = True) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    if header:
        w.writerow(CSV_COLUMNS)
    for row in rows:
        w.writerow([_fmt(row[c]) for c in CSV_COLUMNS])
    return buf.getvalue()


def write_rows(path, rows, append: bool = False) -> None:
    """Write rows with the header, or append them (header only if the file is new)."""
    path = Path(path)
    new = not (append and path.exists())
    with path.open("a" if append else "w", newline="") as fh:
        fh.write(format_rows(rows, header=new))


def read_rows(path) -> list[dict]:
    """Parse a metrics CSV; raises ValueError on a malformed file."""
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ValueError(f"{path}: empty file") from None
        if tuple(header) != CSV_COLUMNS:
            raise ValueError(f"{path}: unexpected header {header}")
        rows = []
        for lineno, values in enumerate(reader, start=2):
            if not values:
                continue
            if len(values) != len(CSV_COLUMNS):
                raise ValueError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
            row = dict(zip(CSV_COLUMNS, values))
            try:
                parsed = {k: float(v) for k, v in row.items() if k not in ("loops", "converged")}
                parsed["loops"] = int(row["loops"])
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            if row["converged"] not in ("true", "false"):
                raise ValueError(f"{path}:{lineno}: converged must be true or false")
            parsed["converged"] = row["converged"] == "true"
            rows.append(parsed)
    return rows
