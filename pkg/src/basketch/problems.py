"""Scalable nonlinear least-squares test problems and an evaluation-counting oracle.

Each problem minimises ``f(x) = sum(r(x)**2)``. Residual Jacobians are
provided for testing only; solvers see residual values through
:class:`CountingOracle` and nothing else.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class BudgetExhausted(RuntimeError):
    """The evaluation budget of a :class:`CountingOracle` is used up."""


@dataclass(frozen=True)
class ProblemSpec:
    name: str
    n: int
    m: int
    x0: np.ndarray
    f_star: float
    residual: Callable[[np.ndarray], np.ndarray]
    jacobian: Callable[[np.ndarray], np.ndarray] | None = None

    def total(self, x) -> float:
        r = self.residual(np.asarray(x, dtype=float))
        return float(r @ r)


class CountingOracle:
    def __init__(self, inner: ProblemSpec, budget: int | None = None):
        self.inner = inner
        self.budget = budget
        self.count = 0

    def __call__(self, x) -> np.ndarray:
        return evaluate(self, x)


def evaluate(oracle: CountingOracle, x) -> np.ndarray:
    if oracle.budget is not None and oracle.count >= oracle.budget:
        raise BudgetExhausted(f"budget of {oracle.budget} evaluations exhausted")
    oracle.count += 1
    return np.asarray(oracle.inner.residual(np.asarray(x, dtype=float)), dtype=float)


# --- families -----------------------------------------------------------------


def _rosenbrock(n):
    if n < 2 or n % 2:
        raise ValueError("extended-rosenbrock needs an even n >= 2")

    def res(x):
        r = np.empty(n)
        r[0::2] = 10.0 * (x[1::2] - x[0::2] ** 2)
        r[1::2] = 1.0 - x[0::2]
        return r

    def jac(x):
        J = np.zeros((n, n))
        i = np.arange(0, n, 2)
        J[i, i] = -20.0 * x[i]
        J[i, i + 1] = 10.0
        J[i + 1, i] = -1.0
        return J

    return n, np.tile([-1.2, 1.0], n // 2), 0.0, res, jac


def _powell(n):
    if n < 4 or n % 4:
        raise ValueError("extended-powell-singular needs n divisible by 4")
    s5, s10 = np.sqrt(5.0), np.sqrt(10.0)

    def res(x):
        a, b, c, d = x[0::4], x[1::4], x[2::4], x[3::4]
        r = np.empty(n)
        r[0::4] = a + 10.0 * b
        r[1::4] = s5 * (c - d)
        r[2::4] = (b - 2.0 * c) ** 2
        r[3::4] = s10 * (a - d) ** 2
        return r

    def jac(x):
        J = np.zeros((n, n))
        for k in range(0, n, 4):
            a, b, c, d = x[k : k + 4]
            J[k, k], J[k, k + 1] = 1.0, 10.0
            J[k + 1, k + 2], J[k + 1, k + 3] = s5, -s5
            J[k + 2, k + 1], J[k + 2, k + 2] = 2.0 * (b - 2.0 * c), -4.0 * (b - 2.0 * c)
            J[k + 3, k], J[k + 3, k + 3] = 2.0 * s10 * (a - d), -2.0 * s10 * (a - d)
        return J

    return n, np.tile([3.0, -1.0, 0.0, 1.0], n // 4), 0.0, res, jac


def _broyden_tridiagonal(n):
    if n < 1:
        raise ValueError("broyden-tridiagonal needs n >= 1")

    def res(x):
        xp = np.concatenate([[0.0], x, [0.0]])
        return (3.0 - 2.0 * x) * x - xp[:-2] - 2.0 * xp[2:] + 1.0

    def jac(x):
        J = np.diag(3.0 - 4.0 * x)
        J -= np.eye(n, k=-1)
        J -= 2.0 * np.eye(n, k=1)
        return J

    return n, -np.ones(n), 0.0, res, jac


LINEAR_EXTRA_ROWS = 5


def _linear_full_rank(n):
    if n < 1:
        raise ValueError("linear-full-rank needs n >= 1")
    m = n + LINEAR_EXTRA_ROWS
    A = np.vstack([np.eye(n), np.zeros((m - n, n))]) - 2.0 / m

    def res(x):
        return A @ x - 1.0

    return m, np.ones(n), float(m - n), res, lambda x: A.copy()


def _trigonometric(n):
    if n < 1:
        raise ValueError("trigonometric needs n >= 1")
    idx = np.arange(1, n + 1, dtype=float)

    def res(x):
        return n - np.sum(np.cos(x)) + idx * (1.0 - np.cos(x)) - np.sin(x)

    def jac(x):
        return np.tile(np.sin(x), (n, 1)) + np.diag(idx * np.sin(x) - np.cos(x))

    return n, np.full(n, 1.0 / n), 0.0, res, jac


SHIFT = 1.0


def _sphere_shifted(n):
    if n < 1:
        raise ValueError("sphere-shifted needs n >= 1")
    return n, np.zeros(n), 0.0, (lambda x: x - SHIFT), (lambda x: np.eye(n))


_REGISTRY = {
    "extended-rosenbrock": (_rosenbrock, "pairs (10(x2-x1^2), 1-x1); x0 = (-1.2, 1, ...); n even"),
    "extended-powell-singular": (_powell, "blocks of four with singular Hessian at the optimum; n % 4 == 0"),
    "broyden-tridiagonal": (_broyden_tridiagonal, "(3-2x_i)x_i - x_{i-1} - 2x_{i+1} + 1; x0 = -1"),
    "linear-full-rank": (_linear_full_rank, f"m = n + {LINEAR_EXTRA_ROWS} affine residuals; f* = m - n"),
    "trigonometric": (_trigonometric, "n - sum cos x_j + i(1 - cos x_i) - sin x_i; x0 = 1/n"),
    "sphere-shifted": (_sphere_shifted, "r = x - 1; x0 = 0"),
}


def problem_names() -> list[str]:
    return list(_REGISTRY)


def describe_problems() -> dict[str, str]:
    return {k: v[1] for k, v in _REGISTRY.items()}


def get_problem(name: str, n: int) -> ProblemSpec:
    try:
        factory = _REGISTRY[name][0]
    except KeyError:
        raise ValueError(f"unknown problem {name!r}; choose from {problem_names()}") from None
    m, x0, f_star, res, jac = factory(int(n))
    return ProblemSpec(name, int(n), m, x0.astype(float), f_star, res, jac)
