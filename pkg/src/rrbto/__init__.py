"""Robust and reliability-based topology optimization under a random Young's modulus field."""

from .benchmarks import build_benchmark, cantilever, lbeam
from .fem import FeaError, ProblemDef, assemble_and_solve
from .montecarlo import LhsSampler, McReport, validate_design
from .sora import DesignField, RrbtoConfig, SoraTrace, run_rrbto, run_sora

__all__ = [
    "DesignField", "FeaError", "LhsSampler", "McReport", "ProblemDef", "RrbtoConfig",
    "SoraTrace", "assemble_and_solve", "build_benchmark", "cantilever", "lbeam", "run_rrbto",
    "run_sora", "validate_design",
]
__version__ = "0.1.0"
