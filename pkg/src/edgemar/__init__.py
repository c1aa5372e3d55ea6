"""Resource allocation for edge-assisted mobile augmented reality."""

from .models import (
    DecisionVars, ModelCurves, ModelDomainError, ObjectiveBreakdown, accuracy,
    constraint_residuals, objective, objective_surrogate,
)
from .scenario import ExperimentConfig, Scenario, generate_scenario, load_config, validate_feasibility
from .solver_core import SolverSettings, initial_feasible_point, optimal_f_step
from .leao import SolveReport, leao_solve, round_and_repair
from .baselines import baseline_solve, rao_solve, uwo_solve
from .oracle import OracleResult, brute_force_solve, verify_constraints
from .harness import run_single, run_sweep

__all__ = [
    "DecisionVars", "ModelCurves", "ModelDomainError", "ObjectiveBreakdown", "accuracy",
    "constraint_residuals", "objective", "objective_surrogate", "ExperimentConfig",
    "Scenario", "generate_scenario", "load_config", "validate_feasibility",
    "SolverSettings", "initial_feasible_point", "optimal_f_step", "SolveReport",
    "leao_solve", "round_and_repair", "baseline_solve", "rao_solve", "uwo_solve",
    "OracleResult", "brute_force_solve", "verify_constraints", "run_single", "run_sweep",
]
