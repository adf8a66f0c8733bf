"""Numerical laboratory for semibicharacteristic families, WKB
quasimodes and solvability-estimate stress tests of model
pseudodifferential symbols on a fixed cotangent chart."""

from .catalog import make_model
from .errors import BicharLabError
from .geometry import (
    evolve_grazing_lagrangean,
    psi_violation_scan,
    subprincipal_divergence,
    trace_semibicharacteristic,
    uniformity_diagnostics,
)
from .operator import ConeCutoff, PreparedOperator, apply_cone_cutoff, \
    apply_operator, solvability_ratio
from .quasimode import Quasimode, assemble_quasimode, norm_scaling_fit, \
    sobolev_norm
from .runner import ExperimentConfig, run_experiment
from .symbols import (
    Jet,
    PhasePoint,
    SymbolModel,
    eval_jet,
    hamilton_field,
    homogeneous_gradient_norm,
    subprincipal,
)

__version__ = "0.1.0"

__all__ = [
    "BicharLabError", "ConeCutoff", "ExperimentConfig", "Jet", "PhasePoint",
    "PreparedOperator", "Quasimode", "SymbolModel", "apply_cone_cutoff",
    "apply_operator", "assemble_quasimode", "eval_jet",
    "evolve_grazing_lagrangean", "hamilton_field",
    "homogeneous_gradient_norm", "make_model", "norm_scaling_fit",
    "psi_violation_scan", "run_experiment", "sobolev_norm", "subprincipal",
    "solvability_ratio", "subprincipal_divergence",
    "trace_semibicharacteristic", "uniformity_diagnostics",
]
