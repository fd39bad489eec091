"""Command-line entry point: ``rrbto {run,sweep,validate,report}``."""
from __future__ import annotations

import argparse
import concurrent.futures
import contextlib
import dataclasses
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import artifacts, config, montecarlo, report, sora
from .fem import FeaError
from .random_field import KLError
from .reliability import ReliabilityError
from .srsm import SrsmError

logger = logging.getLogger("rrbto")

THREADS_ENV = "RRBTO_THREADS"
EXIT_CONFIG = 2
EXIT_FAILURE = 1
_RUN_ERRORS = (FeaError, FloatingPointError, KLError, ReliabilityError, SrsmError, np.linalg.LinAlgError)


@contextlib.contextmanager
def task_mapper():
    """``map`` or an ordered thread-pool map, sized by ``RRBTO_THREADS``."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise config.ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n <= 1:
        yield map
        return
    with concurrent.futures.ThreadPoolExecutor(max_workers=n) as pool:
        yield pool.map


def case_tag(benchmark: str, beta: float, epsilon: float) -> str:
    return f"{benchmark}_beta{beta:g}_eps{epsilon:g}"


def run_case(spec: config.RunSpec, beta: float, epsilon: float, problem, mapper) -> dict:
    """Optimize and validate one (beta, epsilon) case; returns its metrics row.

    Artifacts go to ``<output>/<tag>/``: ``design.pgm``, ``design.npz``,
    ``trace.ndjson`` and ``metrics.csv``.
    """
    cfg = spec.rrbto_config(beta, epsilon, problem=problem)
    outdir = spec.output / case_tag(spec.benchmark, beta, epsilon)
    outdir.mkdir(parents=True, exist_ok=True)
    logger.info("case beta=%g epsilon=%g -> %s", beta, epsilon, outdir)
    design, trace, cfg = sora.run_rrbto(cfg, mapper)
    header = {"benchmark": spec.benchmark, "beta": beta, "epsilon": epsilon,
              "gamma": problem.gamma, "u0": problem.u0, "mu_star": cfg.mu_star,
              "sigma_star": cfg.sigma_star}
    artifacts.write_trace(outdir / "trace.ndjson", trace, header)
    artifacts.write_pgm(outdir / "design.pgm", design.image())
    artifacts.save_design(outdir / "design.npz", design, trace.final.surface, beta, epsilon)
    mc = None
    if spec.mc_mode != "none":
        mc = validate(spec, design, trace.final.surface, problem, mapper)
        if mc.flagged:
            logger.warning("%d Monte Carlo samples failed to solve", mc.n_failed)
    row = artifacts.metrics_row(beta, epsilon, trace, mc)
    artifacts.write_rows(outdir / "metrics.csv", [row])
    return row


def validate(spec: config.RunSpec, design, surface, problem, mapper) -> montecarlo.McReport:
    model = sora.model_for(spec.rrbto_config(1.0, 1.0, problem=problem))
    sampler = montecarlo.LhsSampler(n=spec.mc_samples, dim=model.kl.n_terms, seed=spec.mc_seed)
    return montecarlo.validate_design(problem, model.kl, design.physical, sampler,
                                      mode=spec.mc_mode, surface=surface, penal=spec.penal,
                                      mapper=mapper)


def _load(args) -> config.RunSpec:
    spec = config.load_spec(args.config)
    if getattr(args, "output", None) is not None:
        spec = dataclasses.replace(spec, output=Path(args.output))
    return spec


def cmd_run(args) -> int:
    spec = _load(args)
    if len(spec.betas) != 1 or len(spec.epsilons) != 1:
        raise config.ConfigError("run takes a single beta and epsilon; use sweep for lists")
    problem = spec.problem()
    with task_mapper() as mapper:
        row = run_case(spec, spec.betas[0], spec.epsilons[0], problem, mapper)
    sys.stdout.write(artifacts.format_rows([row]))
    return 0


def cmd_sweep(args) -> int:
    spec = _load(args)
    problem = spec.problem()
    cases = spec.cases()
    # Validate every case before any work so a bad entry leaves no artifacts.
    for beta, eps in cases:
        spec.rrbto_config(beta, eps, problem=problem)
    spec.output.mkdir(parents=True, exist_ok=True)
    summary = spec.output / f"{spec.benchmark}_sweep.csv"
    artifacts.write_rows(summary, [])
    rows = []
    with task_mapper() as mapper:
        for beta, eps in cases:
            row = run_case(spec, beta, eps, problem, mapper)
            artifacts.write_rows(summary, [row], append=True)
            rows.append(row)
    sys.stdout.write(artifacts.format_rows(rows))
    return 0


def cmd_validate(args) -> int:
    spec = _load(args)
    if args.mode:
        spec = dataclasses.replace(spec, mc_mode=args.mode)
    if args.samples:
        spec = dataclasses.replace(spec, mc_samples=args.samples)
    if spec.mc_mode == "none":
        raise config.ConfigError("validate needs mc_mode full or surrogate")
    problem = spec.problem()
    try:
        design, surface, _, _ = artifacts.load_design(args.design)
    except (OSError, KeyError, ValueError) as exc:
        raise config.ConfigError(f"cannot read design {args.design}: {exc}") from exc
    if (design.nelx, design.nely) != (problem.nelx, problem.nely):
        raise config.ConfigError("design mesh does not match the configured benchmark")
    with task_mapper() as mapper:
        mc = validate(spec, design, surface, problem, mapper)
    fields = ("n", "mode", "pf", "se_pf", "mu_B", "sigma_B", "mu_C", "sigma_C", "n_failed")
    print(",".join(fields))
    print(",".join(str(getattr(mc, f)) for f in fields))
    return EXIT_FAILURE if mc.flagged else 0


def _infer_benchmark(paths) -> str:
    return "lbeam" if any("lbeam" in Path(p).name for p in paths) else "cantilever"


def cmd_report(args) -> int:
    rows = []
    for path in args.csv:
        try:
            rows.extend(artifacts.read_rows(path))
        except OSError as exc:
            raise config.ConfigError(f"cannot read {path}: {exc}") from exc
        except ValueError as exc:
            raise config.ConfigError(f"malformed CSV: {exc}") from exc
    benchmark = args.benchmark or _infer_benchmark(args.csv)
    checks = report.check_rows(rows, n_samples=args.samples)
    report.attach_reference(checks, benchmark)
    print(f"benchmark: {benchmark}")
    print(report.format_report(checks))
    return EXIT_FAILURE if any(c.status == "FAIL" for c in checks) else 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rrbto",
        description="Robust and reliability-based topology optimization under a random "
                    "Young's modulus field.")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="log progress (-vv for debug output)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="optimize and validate one (beta, epsilon) case")
    p.add_argument("config", help="flat TOML configuration file")
    p.add_argument("-o", "--output", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run every (beta, epsilon) combination in the config")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("validate", help="Monte Carlo validation of a saved design")
    p.add_argument("design", help="design.npz written by run or sweep")
    p.add_argument("config")
    p.add_argument("--mode", choices=("full", "surrogate"))
    p.add_argument("--samples", type=int)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("report", help="compare metric CSV files with reference results")
    p.add_argument("csv", nargs="+")
    p.add_argument("--benchmark", choices=tuple(report.REFERENCE))
    p.add_argument("--samples", type=int, default=50000,
                   help="Monte Carlo sample count behind the rows (sets the 2 SE margin)")
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = {0: logging.WARNING, 1: logging.INFO}.get(args.verbose, logging.DEBUG)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except config.ConfigError as exc:
        print(f"rrbto: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _RUN_ERRORS as exc:
        print(f"rrbto: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
