"""Dense linear algebra kernels: updatable QR, null-space bases, projections."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

# Orthonormal columns, shape (m, r); r may be 0.
OrthonormalBasis = np.ndarray

RANK_TOL = 1e-12


class RankDeficientError(np.linalg.LinAlgError):
    """Raised when a null-space basis is requested from a rank-deficient factorization."""


@dataclass
class UpdatableQR:
    """Full QR factorization ``A = Q @ R`` kept current under column/row insertion.

    ``Q`` is square (m x m) and ``R`` is upper trapezoidal (m x k) with a
    nonnegative diagonal. Trailing columns ``Q[:, k:]`` span the left null
    space of ``A`` when ``A`` has full column rank.
    """

    Q: np.ndarray
    R: np.ndarray
    col_scale: float = 0.0
    dependent: list[bool] = field(default_factory=list)

    @property
    def m(self) -> int:
        return self.Q.shape[0]

    @property
    def k(self) -> int:
        return self.R.shape[1]

    def copy(self) -> UpdatableQR:
        return UpdatableQR(self.Q.copy(), self.R.copy(), self.col_scale, list(self.dependent))

    def matrix(self) -> np.ndarray:
        return self.Q @ self.R

    def full_rank(self) -> bool:
        if self.k == 0:
            return True
        diag = np.abs(np.diag(self.R[: self.k, : self.k]))
        scale = max(self.col_scale, float(np.max(np.abs(self.R))), 1e-300)
        return bool(np.all(diag > RANK_TOL * scale))

    def insert_column(self, col: np.ndarray) -> UpdatableQR:
        """Return the factorization of ``[A col]`` (O(m^2) rotation update)."""
        m, k = self.m, self.k
        if k >= m:
            raise ValueError(f"cannot insert column: factorization already has {k} = m columns")
        col = np.asarray(col, dtype=float)
        Q, R = scipy.linalg.qr_insert(self.Q, self.R, col, k, which="col", check_finite=False)
        _fix_signs(Q, R, k + 1)
        scale = max(self.col_scale, float(np.linalg.norm(col)))
        dependent = R[k, k] <= RANK_TOL * scale
        if dependent:
            R[k, k] = 0.0
        return UpdatableQR(Q, R, scale, self.dependent + [bool(dependent)])

    def insert_row(self, row: np.ndarray) -> UpdatableQR:
        """Return the factorization of ``A`` with ``row`` appended at the bottom.

        The rotations only touch the leading k columns of Q and the new last
        column, so the previous null-space columns are preserved (padded with
        a zero) and the new null-space direction lands in the last column.
        """
        m, k = self.m, self.k
        if m < k:
            raise ValueError("insert_row needs a tall factorization (m >= k)")
        row = np.asarray(row, dtype=float)
        if k == 0:
            Q = np.eye(m + 1)
            Q[:m, :m] = self.Q
            R = np.zeros((m + 1, 0))
        else:
            Q, R = scipy.linalg.qr_insert(self.Q, self.R, row, m, which="row", check_finite=False)
            _fix_signs(Q, R, k)
        scale = max(self.col_scale, float(np.max(np.abs(row), initial=0.0)))
        return UpdatableQR(Q, R, scale, list(self.dependent))


def _fix_signs(Q: np.ndarray, R: np.ndarray, k: int) -> None:
    """Flip leading columns of Q / rows of R in place so diag(R[:k, :k]) >= 0."""
    neg = np.flatnonzero(np.diag(R[:k, :k]) < 0.0)
    if neg.size:
        Q[:, neg] *= -1.0
        R[neg] *= -1.0


def qr_factorize(A: np.ndarray) -> UpdatableQR:
    """Full QR of ``A`` (m x k, m >= k) with a nonnegative R diagonal."""
    A = np.atleast_2d(np.asarray(A, dtype=float))
    m, k = A.shape
    if m < k:
        raise ValueError(f"qr_factorize needs m >= k, got {m} x {k}")
    if k == 0:
        return UpdatableQR(np.eye(m), np.zeros((m, 0)))
    Q, R = np.linalg.qr(A, mode="complete")
    signs = np.where(np.diag(R) < 0.0, -1.0, 1.0)
    R[:k] *= signs[:, None]
    Q[:, :k] *= signs[None, :]
    scale = float(np.max(np.linalg.norm(A, axis=0)))
    diag = np.abs(np.diag(R))
    dependent = [bool(d <= RANK_TOL * scale) for d in diag]
    return UpdatableQR(Q, R, scale, dependent)


def qr_insert_column(state: UpdatableQR, col: np.ndarray) -> UpdatableQR:
    return state.insert_column(col)


def qr_insert_row(state: UpdatableQR, row: np.ndarray) -> UpdatableQR:
    return state.insert_row(row)


def nullspace_basis(state: UpdatableQR) -> OrthonormalBasis:
    """Trailing m - k columns of Q: an orthonormal basis of the left null space."""
    if not state.full_rank():
        raise RankDeficientError("factorization is rank deficient; null-space basis is not defined")
    return state.Q[:, state.k :]


def min_singular_value(A: np.ndarray) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    if A.size == 0:
        raise ValueError("min_singular_value of an empty matrix")
    return float(np.linalg.svd(A, compute_uv=False).min())


def project_coefficient(basis: OrthonormalBasis, v: np.ndarray) -> float:
    """Norm of the coordinates of ``v`` in ``basis`` (0 when the basis is empty)."""
    if basis.size == 0 or basis.shape[1] == 0:
        return 0.0
    return float(np.linalg.norm(basis.T @ v))
