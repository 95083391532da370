"""Polynomial bases, Vandermonde matrices and underdetermined quadratic interpolation.

Quadratic coefficients (``beta``) use the scaled monomials ``y_i**2 / 2``
followed by ``y_i * y_j / sqrt(2)`` for ``i < j`` in lexicographic order. With
that scaling ``||beta||`` equals the Frobenius norm of the model Hessian, and
the Gram matrix of the quadratic block is ``(Y @ Y.T)**2 / 4``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .linalg import qr_factorize

LINEAR = "linear"
QUADRATIC = "quadratic"
SKETCHED = "sketched"
COMPLEMENT = "complement"
QUADRATIC_ONLY = "quadratic_only"

_KINDS = (LINEAR, QUADRATIC, SKETCHED, COMPLEMENT, QUADRATIC_ONLY)
_SQRT2 = np.sqrt(2.0)


class PoisednessError(np.linalg.LinAlgError):
    """The interpolation set does not admit a unique minimal-norm interpolant."""


@dataclass(frozen=True)
class BasisSpec:
    kind: str
    S: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown basis kind {self.kind!r}")
        if self.kind in (SKETCHED, COMPLEMENT):
            if self.S is None:
                raise ValueError(f"basis kind {self.kind!r} needs a row matrix")
            S = np.atleast_2d(np.asarray(self.S, dtype=float))
            if S.shape[0] and not np.allclose(S @ S.T, np.eye(S.shape[0]), atol=1e-12 * max(S.shape[1], 1)):
                raise ValueError("sketch rows must be orthonormal")


def n_quadratic(n: int) -> int:
    return n * (n + 1) // 2


@dataclass(frozen=True)
class _QuadIndex:
    rows: np.ndarray
    cols: np.ndarray
    scale: np.ndarray


_quad_cache: dict[int, _QuadIndex] = {}


def _quad_index(n: int) -> _QuadIndex:
    if n not in _quad_cache:
        iu, ju = np.triu_indices(n, k=1)
        rows = np.concatenate([np.arange(n), iu])
        cols = np.concatenate([np.arange(n), ju])
        scale = np.concatenate([np.full(n, 0.5), np.full(iu.size, 1.0 / _SQRT2)])
        _quad_cache[n] = _QuadIndex(rows, cols, scale)
    return _quad_cache[n]


def quadratic_features(Y: np.ndarray) -> np.ndarray:
    """Rows of ``M(Phi_Q \\ Phi_L, Y)``."""
    Y = np.atleast_2d(Y)
    idx = _quad_index(Y.shape[1])
    return Y[:, idx.rows] * Y[:, idx.cols] * idx.scale


def beta_to_hessian(beta: np.ndarray, n: int) -> np.ndarray:
    """Symmetric Hessian(s) whose quadratic form matches the coefficients.

    ``beta`` may be a vector or an (nq, m) matrix of column coefficient
    vectors; the latter returns an (m, n, n) stack.
    """
    idx = _quad_index(n)
    beta = np.asarray(beta, dtype=float)
    # diag entries: beta_i * y_i^2/2 -> H_ii = beta_i; off-diag: beta_ij*y_i*y_j/sqrt2 -> H_ij = beta_ij/sqrt2
    weights = np.where(idx.rows == idx.cols, 1.0, 1.0 / _SQRT2)
    if beta.ndim == 1:
        H = np.zeros((n, n))
        H[idx.rows, idx.cols] = beta * weights
        H[idx.cols, idx.rows] = beta * weights
        return H
    H = np.zeros((beta.shape[1], n, n))
    vals = (beta * weights[:, None]).T
    H[:, idx.rows, idx.cols] = vals
    H[:, idx.cols, idx.rows] = vals
    return H


def hessian_to_beta(H: np.ndarray) -> np.ndarray:
    """Inverse of :func:`beta_to_hessian`; an (m, n, n) stack gives an (nq, m) matrix."""
    H = np.asarray(H, dtype=float)
    n = H.shape[-1]
    idx = _quad_index(n)
    weights = np.where(idx.rows == idx.cols, 1.0, _SQRT2)
    if H.ndim == 2:
        return H[idx.rows, idx.cols] * weights
    return (H[:, idx.rows, idx.cols] * weights).T


def eval_basis(spec: BasisSpec, y: np.ndarray) -> np.ndarray:
    return assemble_vandermonde(spec, np.atleast_2d(y))[0]


def assemble_vandermonde(spec: BasisSpec, Y) -> np.ndarray:
    """``M(Phi, Y)``: row i holds the basis evaluated at the i-th point."""
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    ones = np.ones((Y.shape[0], 1))
    if spec.kind == LINEAR:
        return np.hstack([ones, Y])
    if spec.kind == QUADRATIC_ONLY:
        return quadratic_features(Y)
    if spec.kind == QUADRATIC:
        return np.hstack([ones, Y, quadratic_features(Y)])
    S = np.atleast_2d(np.asarray(spec.S, dtype=float)).reshape(-1, Y.shape[1])
    if spec.kind == SKETCHED:
        return np.hstack([ones, Y @ S.T])
    return Y @ S.T


@dataclass(frozen=True)
class QuadraticModel:
    """``c + g.(x - center) + 0.5 (x - center).H.(x - center)``."""

    center: np.ndarray
    g: np.ndarray
    H: np.ndarray
    c: float = 0.0

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        object.__setattr__(self, "H", 0.5 * (H + H.T))

    @property
    def L_mg(self) -> float:
        if self.H.size == 0:
            return 0.0
        return float(np.linalg.norm(self.H, 2))


def model_value(m: QuadraticModel, x: np.ndarray) -> float:
    s = np.asarray(x, dtype=float) - m.center
    return float(m.c + m.g @ s + 0.5 * s @ m.H @ s)


def model_gradient(m: QuadraticModel, x: np.ndarray) -> np.ndarray:
    s = np.asarray(x, dtype=float) - m.center
    return m.g + m.H @ s


@dataclass
class SketchSolveResult:
    """Solution of the basis-sketch (or MNH) subproblem.

    Right-hand sides may be stacked as columns; every coefficient array then
    carries a trailing axis of the same width.
    """

    alpha: np.ndarray
    gamma: np.ndarray
    lam: np.ndarray
    Y: np.ndarray
    beta_prior: np.ndarray | None = None
    kappa_diag: dict = field(default_factory=dict)

    @cached_property
    def beta(self) -> np.ndarray:
        beta = quadratic_features(self.Y).T @ self.lam
        if self.beta_prior is not None:
            beta = beta + self.beta_prior
        return beta

    def hessian(self) -> np.ndarray:
        """Model Hessian(s), built from the multipliers without forming ``beta``."""
        n = self.Y.shape[1]
        if self.lam.ndim == 1:
            H = 0.5 * (self.Y.T * self.lam) @ self.Y
            if self.beta_prior is not None:
                H = H + beta_to_hessian(self.beta_prior, n)
            return H
        outer = (self.Y[:, :, None] * self.Y[:, None, :]).reshape(self.Y.shape[0], n * n)
        H = 0.5 * (self.lam.T @ outer).reshape(-1, n, n)
        if self.beta_prior is not None:
            H = H + beta_to_hessian(self.beta_prior, n)
        return H


def _reduced_solve(M_lin: np.ndarray, K: np.ndarray, rhs: np.ndarray):
    """Solve the saddle system through its null-space reduction.

    Returns ``(alpha, lam, diag)`` where ``lam = N @ omega`` with ``N`` an
    orthonormal basis for the null space of ``M_lin.T``.
    """
    p, q = M_lin.shape
    if p < q:
        raise PoisednessError(f"{p} points cannot determine {q} linear coefficients")
    qr = qr_factorize(M_lin)
    if not qr.full_rank():
        raise PoisednessError("linear Vandermonde block is rank deficient")
    Q1, N = qr.Q[:, :q], qr.Q[:, q:]
    R1 = qr.R[:q]
    diag = {"linear_sigma_min": float(np.min(np.abs(np.diag(R1))))}
    if N.shape[1]:
        A = N.T @ K @ N
        A = 0.5 * (A + A.T)
        threshold = 1e-12 * max(float(np.trace(A)), 1e-300)
        try:
            L = np.linalg.cholesky(A)
        except np.linalg.LinAlgError as exc:
            raise PoisednessError("reduced system N'KN is not positive definite") from exc
        if float(np.min(np.diag(L))) ** 2 <= threshold:
            raise PoisednessError("reduced system N'KN is numerically singular")
        omega = np.linalg.solve(L.T, np.linalg.solve(L, N.T @ rhs))
        lam = N @ omega
        diag["reduced_sigma_min"] = float(np.sqrt(max(np.linalg.eigvalsh(A)[0], 0.0)))
    else:
        lam = np.zeros_like(rhs)
        diag["reduced_sigma_min"] = np.inf
    alpha = np.linalg.solve(R1, Q1.T @ (rhs - K @ lam))
    return alpha, lam, diag


def _seed_inverse_norm(Y: np.ndarray, S: np.ndarray) -> float:
    s = S.shape[0]
    if s == 0:
        return 0.0
    if Y.shape[0] < s + 1:
        return np.inf
    Yt = S @ (Y[1 : s + 1] - Y[0]).T
    try:
        return float(np.linalg.norm(np.linalg.inv(Yt), 2))
    except np.linalg.LinAlgError:
        return np.inf


def solve_basis_sketch(S, S_perp, Y, rhs, prior=None) -> SketchSolveResult:
    """Minimise ``0.5||beta - beta_bar||^2 + 0.5||gamma - gamma_bar||^2`` subject to
    interpolation on ``Phi_S``, ``Phi_{S_perp}`` and the quadratic monomials.

    ``prior`` is ``(beta_bar, gamma_bar)``; either entry may be None.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[1]
    S = np.asarray(S, dtype=float).reshape(-1, n)
    S_perp = np.asarray(S_perp, dtype=float).reshape(-1, n)
    rhs = np.asarray(rhs, dtype=float)
    beta_bar, gamma_bar = prior if prior is not None else (None, None)

    M_S = np.hstack([np.ones((Y.shape[0], 1)), Y @ S.T])
    M_g = Y @ S_perp.T
    G = Y @ Y.T
    K = M_g @ M_g.T + 0.25 * G * G

    resid = rhs
    if beta_bar is not None:
        resid = resid - quadratic_features(Y) @ beta_bar
    if gamma_bar is not None:
        resid = resid - M_g @ gamma_bar

    alpha, lam, diag = _reduced_solve(M_S, K, resid)
    gamma = M_g.T @ lam
    if gamma_bar is not None:
        gamma = gamma + gamma_bar
    diag["seed_inverse_norm"] = _seed_inverse_norm(Y, S)
    return SketchSolveResult(alpha, gamma, lam, Y, beta_bar, diag)


def solve_mnh(Y, rhs, prior=None):
    """Minimal-norm (or minimal-change, given ``prior``) Hessian interpolation.

    Returns ``(alpha, beta)``; ``alpha`` holds the constant then the n linear
    coefficients. Use :func:`solve_mnh_result` for the full solve record.
    """
    res = solve_mnh_result(Y, rhs, prior)
    return res.alpha, res.beta


def solve_mnh_result(Y, rhs, prior=None) -> SketchSolveResult:
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    rhs = np.asarray(rhs, dtype=float)
    M_L = np.hstack([np.ones((Y.shape[0], 1)), Y])
    G = Y @ Y.T
    K = 0.25 * G * G
    resid = rhs if prior is None else rhs - quadratic_features(Y) @ prior
    alpha, lam, diag = _reduced_solve(M_L, K, resid)
    gamma = np.zeros((0,) + rhs.shape[1:])
    diag["seed_inverse_norm"] = _seed_inverse_norm(Y, np.eye(Y.shape[1]))
    return SketchSolveResult(alpha, gamma, lam, Y, prior, diag)


def sketch_model(res: SketchSolveResult, S, S_perp, center=None) -> QuadraticModel:
    """Assemble a single-rhs solve into a model in the coordinates of ``Y``."""
    n = res.Y.shape[1]
    S = np.asarray(S, dtype=float).reshape(-1, n)
    S_perp = np.asarray(S_perp, dtype=float).reshape(-1, n)
    g = S.T @ res.alpha[1:] + S_perp.T @ res.gamma
    c = np.zeros(n) if center is None else np.asarray(center, dtype=float)
    # value at the origin of the Y coordinates is alpha_0; shift to `center`
    H = res.hessian()
    value = res.alpha[0] + g @ c + 0.5 * c @ H @ c
    return QuadraticModel(c, g + H @ c, H, float(value))


def check_s_full_linearity(
    m: QuadraticModel,
    f: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    S,
    delta: float,
    c: float,
    Lambda: float,
    L_g: float,
    n_samples: int = 1000,
    rng: np.random.Generator | None = None,
) -> dict:
    """Sample directions ``d`` with ``||S.T d|| <= delta`` and compare errors against
    the subspace full-linearity constants.

    Returns the constants, the worst observed ``|m - f| / delta**2`` and
    ``||S grad m - S grad f|| / delta``, and whether both stay within bound.
    """
    S = np.atleast_2d(np.asarray(S, dtype=float))
    p = S.shape[0]
    rng = np.random.default_rng(0) if rng is None else rng
    L_mg = m.L_mg
    kappa_ef = (4.0 + 5.0 * Lambda * np.sqrt(p)) / 2.0 * (L_g + L_mg) * c**2
    kappa_eg = 5.0 * Lambda * np.sqrt(p) / 2.0 * (L_g + L_mg) * c
    worst_f = 0.0
    worst_g = 0.0
    for _ in range(n_samples):
        d = rng.standard_normal(p)
        d *= delta * rng.uniform() ** (1.0 / p) / np.linalg.norm(d)
        x = m.center + S.T @ d
        worst_f = max(worst_f, abs(model_value(m, x) - f(x)) / delta**2)
        worst_g = max(worst_g, float(np.linalg.norm(S @ (model_gradient(m, x) - grad(x)))) / delta)
    return {
        "kappa_ef": float(kappa_ef),
        "kappa_eg": float(kappa_eg),
        "max_value_ratio": worst_f,
        "max_gradient_ratio": worst_g,
        "within_bounds": bool(worst_f <= kappa_ef * (1 + 1e-12) and worst_g <= kappa_eg * (1 + 1e-12)),
    }
