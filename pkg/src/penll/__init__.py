"""Penalized local-linear regression between the full local-linear fit and
the smooth-backfitting additive fit."""

__version__ = "0.1.0"

from .core import (
    R_INF,
    BandwidthSpec,
    CalibrationError,
    ConvergenceError,
    Dataset,
    DegenerateFitError,
    FitConfig,
    Grid,
    PenllError,
    SelectionError,
    UndefinedCriterionError,
)
from .kernels import assemble_moments
from .additive import anova_decompose, apply_Z, apply_Zt, project_additive
from .solver import residual_norm, solve_direct, solve_iterative
from .estimator import FitResult, Smoother, fit, hat_matrix, predict
from .selection import SearchLattice, criterion, evaluate_lattice, ise, oracle_select, select
from .simulation import ScenarioSpec, run_scenario, summarize, truth_additive, truth_nonadditive
from .analysis import AnalysisOptions, analyze, calibrate_bandwidth_by_df
from .dataio import ScalingRecord, ingest_csv

__all__ = [
    "R_INF", "BandwidthSpec", "CalibrationError", "ConvergenceError", "Dataset",
    "DegenerateFitError", "FitConfig", "Grid", "PenllError", "SelectionError",
    "UndefinedCriterionError", "assemble_moments", "anova_decompose", "apply_Z", "apply_Zt",
    "project_additive", "residual_norm", "solve_direct", "solve_iterative", "FitResult",
    "Smoother", "fit", "hat_matrix", "predict", "SearchLattice", "criterion",
    "evaluate_lattice", "ise", "oracle_select", "select", "ScenarioSpec", "run_scenario",
    "summarize", "truth_additive", "truth_nonadditive", "AnalysisOptions", "analyze",
    "calibrate_bandwidth_by_df", "ScalingRecord", "ingest_csv",
]
