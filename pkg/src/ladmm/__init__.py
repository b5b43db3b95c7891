"""ADMM toolkit for box-constrained convex QPs with a trainable inner solver."""

from .problem import (
    BoxQp,
    Iterate,
    NonFiniteError,
    Residuals,
    SolveMetrics,
    ValidationError,
    constraint_violations,
    eval_objective,
    project_box,
    residuals,
    stationarity_violation,
    validate_box_qp,
)
from .admm import AdmmSettings, MaxIterExceeded, admm_step, restore_feasibility, solve_exact
from .inexact import (
    ConditionReport,
    EnergyState,
    InexactConstants,
    InfeasibleConstantsError,
    augmented_lagrangian,
    check_conditions,
    derive_constants,
    energy_step,
    run_inexact_admm,
)
from .scaling import ScalingState, ruiz_equilibrate, scale_problem, unscale_solution
from .linalg import SpectralEstimates, cg_solve, ldl_factorize, spectral_estimates
from .datasets import GeneratorSpec, generate
from .estimators import ExactAdmm, InexactAdmm, LstmSolver, RuizScaler
from .rng import CounterRng

__version__ = "0.1.0"

__all__ = [
    "AdmmSettings", "BoxQp", "ConditionReport", "CounterRng", "EnergyState",
    "ExactAdmm", "GeneratorSpec", "InexactAdmm", "InexactConstants",
    "InfeasibleConstantsError", "Iterate", "LstmSolver", "MaxIterExceeded",
    "NonFiniteError", "Residuals", "RuizScaler", "ScalingState", "SolveMetrics",
    "SpectralEstimates", "ValidationError", "admm_step", "augmented_lagrangian",
    "cg_solve", "check_conditions", "constraint_violations", "derive_constants",
    "energy_step", "eval_objective", "generate", "ldl_factorize", "project_box",
    "residuals", "restore_feasibility", "ruiz_equilibrate", "run_inexact_admm",
    "scale_problem", "solve_exact", "spectral_estimates", "stationarity_violation",
    "unscale_solution", "validate_box_qp",
]
