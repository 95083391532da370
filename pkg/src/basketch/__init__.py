"""Randomized basis-sketching trust-region method for derivative-free nonlinear least squares."""
from .problems import BudgetExhausted, CountingOracle, ProblemSpec, evaluate, get_problem, problem_names
from .solver import (
    RunHistory,
    SolverConfig,
    combine_least_squares_model,
    init_average_gradient,
    run_basis_sketching,
    run_deterministic_baseline,
    solve,
)

__all__ = [
    "BudgetExhausted",
    "CountingOracle",
    "ProblemSpec",
    "RunHistory",
    "SolverConfig",
    "combine_least_squares_model",
    "evaluate",
    "get_problem",
    "init_average_gradient",
    "problem_names",
    "run_basis_sketching",
    "run_deterministic_baseline",
    "solve",
]
