"""Point bank and greedy geometry: subspace identification and interpolation-set selection."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import solve_triangular

from .linalg import UpdatableQR, min_singular_value, project_coefficient, qr_factorize
from .poly_model import assemble_vandermonde, BasisSpec, COMPLEMENT, quadratic_features, SKETCHED


def least_squares_total(residuals: np.ndarray) -> float:
    return float(np.dot(residuals, residuals))


class PointBank:
    """Append-only store of evaluated points, residual vectors and totals."""

    def __init__(self, n: int, m: int, capacity: int = 64):
        self.n, self.m = n, m
        self._x = np.empty((capacity, n))
        self._r = np.empty((capacity, m))
        self._f = np.empty(capacity)
        self.eval_count = 0

    def __len__(self) -> int:
        return self.eval_count

    def append(self, x: np.ndarray, residuals: np.ndarray) -> int:
        if self.eval_count == self._x.shape[0]:
            cap = 2 * self._x.shape[0]
            self._x = np.resize(self._x, (cap, self.n))
            self._r = np.resize(self._r, (cap, self.m))
            self._f = np.resize(self._f, cap)
        i = self.eval_count
        self._x[i] = x
        self._r[i] = residuals
        self._f[i] = least_squares_total(residuals) if np.all(np.isfinite(residuals)) else np.inf
        self.eval_count += 1
        return i

    @property
    def points(self) -> np.ndarray:
        return self._x[: self.eval_count]

    @property
    def residuals(self) -> np.ndarray:
        return self._r[: self.eval_count]

    @property
    def totals(self) -> np.ndarray:
        return self._f[: self.eval_count]

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["index"] + [f"x{j}" for j in range(self.n)] + [f"r{j}" for j in range(self.m)] + ["total"])
            for i in range(self.eval_count):
                w.writerow([i] + [repr(float(v)) for v in self._x[i]] + [repr(float(v)) for v in self._r[i]] + [repr(float(self._f[i]))])


@dataclass(frozen=True)
class GeometryConfig:
    c: float
    theta1: float = 1e-5
    theta2: float = 1e-3
    Lambda: float | None = None
    max_points: int | None = None

    def __post_init__(self):
        if self.c < 1.0:
            raise ValueError("c must be >= 1")
        if not 0.0 < self.theta1 <= 1.0 / self.c:
            raise ValueError("theta1 must lie in (0, 1/c]")
        if self.theta2 <= 0.0:
            raise ValueError("theta2 must be positive")

    @classmethod
    def default(cls, n: int, **kw) -> GeometryConfig:
        kw.setdefault("max_points", 2 * n + 1)
        return cls(c=float(np.sqrt(n)), **kw)

    @property
    def poisedness_bound(self) -> float:
        return self.Lambda if self.Lambda is not None else 1.0 / self.theta1


@dataclass
class SubspaceSelection:
    S: np.ndarray
    S_perp: np.ndarray
    Q: np.ndarray
    contributing_points: list[int] = field(default_factory=list)

    @property
    def rank(self) -> int:
        return self.S.shape[0]


def identify_initial_subspace(bank: PointBank, x: np.ndarray, delta: float, cfg: GeometryConfig) -> SubspaceSelection:
    """Greedy scan of the bank for displacements with enough reach into the current complement."""
    n = bank.n
    radius = cfg.c * delta
    qr = UpdatableQR(np.eye(n), np.zeros((n, 0)))
    admitted: list[int] = []
    D = bank.points - x
    near = np.flatnonzero((np.linalg.norm(D, axis=1) <= radius) & np.isfinite(bank.totals))
    for i in near:
        if project_coefficient(qr.Q[:, qr.k :], D[i] / radius) >= cfg.theta1:
            qr = qr.insert_column(D[i])
            admitted.append(int(i))
            if qr.k == n:
                break
    k = qr.k
    return SubspaceSelection(qr.Q[:, :k].T.copy(), qr.Q[:, k:].T.copy(), qr.Q.copy(), admitted)


@dataclass
class InterpolationSet:
    points: list[int]
    Z_initial: list[int]
    sigma_min_record: float


def _kernel(A: np.ndarray, B: np.ndarray, S_perp: np.ndarray) -> np.ndarray:
    """Gram block ``M_{S_perp}(A) @ M_{S_perp}(B).T`` of the complement-plus-quadratic basis."""
    G = A @ B.T
    return (A @ S_perp.T) @ (B @ S_perp.T).T + 0.25 * G * G


def _batch_schur(qr, L, KY, Y, cands, S, S_perp, th2) -> np.ndarray:
    """Schur-complement margin of appending each candidate row on its own."""
    k = qr.k
    Q1, R1 = qr.Q[:, :k], qr.R[:k]
    rows = np.hstack([np.ones((cands.shape[0], 1)), cands @ S.T])
    z = solve_triangular(R1, rows.T, trans="T", lower=False, check_finite=False)
    top = -(Q1 @ z)
    norm = np.sqrt(1.0 + np.sum(z * z, axis=0))
    top /= norm
    last = 1.0 / norm
    kv = _kernel(Y, cands, S_perp)
    P = cands @ S_perp.T
    kyy = np.sum(P * P, axis=1) + 0.25 * np.sum(cands * cands, axis=1) ** 2
    Ku_top = KY @ top + kv * last
    corner = np.sum(top * Ku_top, axis=0) + last * (np.sum(kv * top, axis=0) + kyy * last)
    b = qr.Q[:, k:].T @ Ku_top
    if L.shape[0]:
        l = solve_triangular(L, b, lower=True, check_finite=False)
        return corner - th2 - np.sum(l * l, axis=0)
    return corner - th2


def determine_interpolation_set(
    S: np.ndarray,
    S_perp: np.ndarray,
    Z: list[int],
    bank: PointBank,
    x: np.ndarray,
    delta: float,
    cfg: GeometryConfig,
) -> InterpolationSet:
    """Greedily extend the seed set ``Z`` with bank points that keep the reduced
    system ``N' K N`` well conditioned (smallest singular value of
    ``M_{S_perp}(Y)' N`` at least ``theta2``).

    Points are handled in scaled coordinates ``(y - x) / delta``. The
    singular-value test on each bordered candidate matrix is applied through
    its Schur complement against a running Cholesky factor of
    ``N'KN - theta2**2 I``, which is equivalent. Between acceptances the
    factorization does not change, so remaining candidates are screened in
    one batch.
    """
    n = bank.n
    S = np.asarray(S, dtype=float).reshape(-1, n)
    S_perp = np.asarray(S_perp, dtype=float).reshape(-1, n)
    Z = list(Z)
    cap = cfg.max_points if cfg.max_points is not None else (n + 1) * (n + 2) // 2
    D = (bank.points - x) / delta
    Y = D[Z]
    qr = qr_factorize(np.hstack([np.ones((len(Z), 1)), Y @ S.T]))
    if not qr.full_rank():
        return InterpolationSet(Z, list(Z), np.inf)
    th2 = cfg.theta2**2
    KY = _kernel(Y, Y, S_perp)
    L = np.zeros((0, 0))
    accepted = list(Z)
    in_set = np.zeros(bank.eval_count, dtype=bool)
    in_set[Z] = True
    near = np.flatnonzero((np.linalg.norm(D, axis=1) <= cfg.c) & ~in_set & np.isfinite(bank.totals))
    pos = 0
    while pos < near.size and len(accepted) < cap:
        # Until a point is accepted the factorization is fixed, so the test is
        # evaluated for all remaining candidates at once; the first pass wins.
        cands = D[near[pos:]]
        schur = _batch_schur(qr, L, KY, Y, cands, S, S_perp, th2)
        hits = np.flatnonzero(schur > 0.0)
        if hits.size == 0:
            break
        pos += int(hits[0])
        i = near[pos]
        pos += 1
        y = D[i]
        cand = qr.insert_row(np.concatenate([[1.0], S @ y]))
        u = cand.Q[:, -1]
        kv = _kernel(Y, y[None, :], S_perp)[:, 0]
        kyy = float(_kernel(y[None, :], y[None, :], S_perp)[0, 0])
        Ku_top = KY @ u[:-1] + kv * u[-1]
        corner = float(u[:-1] @ Ku_top + u[-1] * (kv @ u[:-1] + kyy * u[-1]))
        b = qr.Q[:, qr.k :].T @ Ku_top
        l = solve_triangular(L, b, lower=True, check_finite=False) if L.shape[0] else b
        schur_i = corner - th2 - float(l @ l)
        if schur_i <= 0.0:
            # batch and single evaluations disagree only at round-off level
            continue
        r = L.shape[0]
        L_new = np.zeros((r + 1, r + 1))
        L_new[:r, :r] = L
        L_new[r, :r] = l
        L_new[r, r] = np.sqrt(schur_i)
        L = L_new
        qr = cand
        KY = np.block([[KY, kv[:, None]], [kv[None, :], np.array([[kyy]])]])
        Y = np.vstack([Y, y])
        accepted.append(int(i))
    sigma = np.inf
    if len(accepted) > len(Z):
        N = qr.Q[:, qr.k :]
        sigma = float(np.sqrt(max(np.linalg.eigvalsh(N.T @ KY @ N)[0], 0.0)))
    return InterpolationSet(accepted, list(Z), sigma)


def complement_rows(S: np.ndarray, n: int) -> np.ndarray:
    """Orthonormal rows spanning the orthogonal complement of the rows of ``S``."""
    S = np.asarray(S, dtype=float).reshape(-1, n)
    qr = qr_factorize(S.T) if S.shape[0] else UpdatableQR(np.eye(n), np.zeros((n, 0)))
    return qr.Q[:, S.shape[0] :].T.copy()


def verify_unique_solvability(S, Y, S_perp=None) -> tuple[bool, dict]:
    """Check the two conditions guaranteeing a unique basis-sketch solution.

    Works from explicitly assembled Vandermonde blocks, independent of the
    kernel shortcuts used during selection.
    """
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    n = Y.shape[1]
    S = np.asarray(S, dtype=float).reshape(-1, n)
    s = S.shape[0]
    if S_perp is None:
        S_perp = complement_rows(S, n)
    M_S = assemble_vandermonde(BasisSpec(SKETCHED, S), Y) if s else np.ones((Y.shape[0], 1))
    M_perp = np.hstack([assemble_vandermonde(BasisSpec(COMPLEMENT, S_perp), Y), quadratic_features(Y)]) if S_perp.shape[0] else quadratic_features(Y)
    info: dict = {"rank_M_S": int(np.linalg.matrix_rank(M_S)), "needed_rank": s + 1}
    if info["rank_M_S"] != s + 1:
        return False, info
    U, _, _ = np.linalg.svd(M_S, full_matrices=True)
    N = U[:, s + 1 :]
    if N.shape[1] == 0:
        info["reduced_lambda_min"] = np.inf
        return True, info
    A = N.T @ M_perp @ M_perp.T @ N
    lam_min = float(np.linalg.eigvalsh(0.5 * (A + A.T))[0])
    info["reduced_lambda_min"] = lam_min
    info["sigma_min"] = min_singular_value(M_perp.T @ N)
    ok = lam_min > 1e-12 * max(float(np.trace(A)), 1e-300)
    if s < 2:
        full = np.hstack([M_S, M_perp])
        ok = ok and np.linalg.matrix_rank(full) == Y.shape[0]
    return bool(ok), info
