"""Sampling distributions and sketch-and-project estimators.

Gradient arguments may be a single n-vector or an (n, m) matrix whose columns
are per-component gradients; Hessian arguments may be (n, n) or an (m, n, n)
stack. All updates act column/slice-wise.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

PI_FLOOR = 1e-8
PRACTICAL = "practical"
FULL = "full"
MAX_ENUMERATION_DIM = 12


@dataclass(frozen=True)
class ProbabilityVector:
    pi: np.ndarray
    expected_size: float
    raw: np.ndarray | None = None


@dataclass(frozen=True)
class SampleRealization:
    J: np.ndarray
    seed_state: dict


@dataclass
class EstimatorState:
    g_bar: np.ndarray
    H_bar: np.ndarray


@dataclass(frozen=True)
class AmelioratedPair:
    g_tilde: np.ndarray
    H_tilde: np.ndarray
    D: np.ndarray


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator; one per run."""
    return np.random.Generator(np.random.Philox(seed))


def optimal_probabilities(delta: np.ndarray, Q: np.ndarray, p_k: float, floor: float = PI_FLOOR) -> ProbabilityVector:
    """Minimum-variance inclusion probabilities with expected sample size ``p_k``.

    Minimises ``sum(v_i**2 / pi_i)`` over ``sum(pi) = p_k``, ``0 <= pi <= 1``
    with ``v = |Q.T delta|``. ``Q`` may have fewer columns than rows, in which
    case probabilities are returned for its columns only.
    """
    v = np.abs(np.asarray(Q, dtype=float).T @ np.asarray(delta, dtype=float))
    r = v.size
    if not 0 < p_k <= r:
        raise ValueError(f"p_k must lie in (0, {r}], got {p_k}")
    if p_k >= r:
        ones = np.ones(r)
        return ProbabilityVector(ones, float(r), ones.copy())
    if not np.any(v > 0.0):
        raw = np.full(r, p_k / r)
        return ProbabilityVector(raw.copy(), float(raw.sum()), raw)
    order = np.argsort(v, kind="stable")
    vs = v[order]
    csum = np.cumsum(vs)
    c_star = None
    for c in range(r, 0, -1):
        excess = p_k + c - r
        if excess <= 0:
            break
        if vs[c - 1] > 0.0 and excess <= csum[c - 1] / vs[c - 1]:
            c_star = c
            break
    raw_sorted = np.ones(r)
    if c_star is None:
        # every admissible c has a zero pivot: mass goes uniformly to the zero block
        c_star = int(np.searchsorted(vs, 0.0, side="right"))
        raw_sorted[:c_star] = (p_k + c_star - r) / c_star
    else:
        raw_sorted[:c_star] = (p_k + c_star - r) * vs[:c_star] / csum[c_star - 1]
    raw = np.empty(r)
    raw[order] = raw_sorted
    pi = np.clip(raw, floor, 1.0)
    return ProbabilityVector(pi, float(pi.sum()), raw)


def weighted_variance_norm(delta: np.ndarray, Q: np.ndarray, pi: np.ndarray) -> float:
    """``||delta||^2`` in the ``Q diag(1/pi) Q' - I`` metric, restricted to the columns of ``Q``."""
    v = np.asarray(Q, dtype=float).T @ np.asarray(delta, dtype=float)
    return float(np.sum((1.0 / pi - 1.0) * v * v))


def choose_sketch_size(radius: float, Q: np.ndarray, C: float, delta: np.ndarray, b0: int, n: int | None = None):
    """Smallest expected size ``b >= b0`` whose optimal distribution keeps the
    estimated variance below ``n C^2 radius^2``.

    ``n`` defaults to the row count of ``Q`` (the ambient dimension). Returns
    ``(p_k, ProbabilityVector)``.
    """
    Q = np.asarray(Q, dtype=float)
    r = Q.shape[1]
    n = Q.shape[0] if n is None else n
    ones = ProbabilityVector(np.ones(r), float(r), np.ones(r))
    if r == 0:
        return 0, ones
    if C == 0.0:
        return r, ones
    threshold = n * C**2 * radius**2
    for b in range(max(1, min(b0, r)), r + 1):
        probs = optimal_probabilities(delta, Q, b)
        if weighted_variance_norm(delta, Q, probs.pi) <= threshold:
            return b, probs
    return r, ones


def realize_subset(pi, rng: np.random.Generator) -> SampleRealization:
    """Independent Bernoulli draws, consumed in index order."""
    pi = pi.pi if isinstance(pi, ProbabilityVector) else np.asarray(pi, dtype=float)
    state = rng.bit_generator.state
    draws = rng.random(pi.size)
    return SampleRealization(np.flatnonzero(draws < pi), state)


def update_average_gradient(g_bar: np.ndarray, S: np.ndarray, g_hat: np.ndarray) -> np.ndarray:
    """Closest point to ``g_bar`` whose ``S``-sketch agrees with ``g_hat``."""
    S = np.atleast_2d(S)
    if S.shape[0] == S.shape[1]:
        return np.array(g_hat, dtype=float, copy=True)
    return g_bar + S.T @ (S @ (g_hat - g_bar))


def _sandwich(S: np.ndarray, H: np.ndarray) -> np.ndarray:
    """``S @ H @ S.T`` for a single matrix or a stack."""
    return S @ H @ S.T


def update_average_hessian(H_bar: np.ndarray, S: np.ndarray, H_hat_sub: np.ndarray) -> np.ndarray:
    """Closest matrix to ``H_bar`` (Frobenius) whose ``S``-sandwich equals ``H_hat_sub``."""
    S = np.atleast_2d(S)
    if S.shape[0] == S.shape[1]:
        # full sketch: the constraint pins H down completely
        H = S.T @ H_hat_sub @ S
        return 0.5 * (H + np.swapaxes(H, -1, -2))
    B = _sandwich(S, H_bar)
    H = H_bar - S.T @ (B - H_hat_sub) @ S
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def _sketch_rows(Q: np.ndarray, J) -> tuple[np.ndarray, np.ndarray]:
    J = np.asarray(J, dtype=int)
    return np.asarray(Q, dtype=float)[:, J].T, J


def _is_identity_sketch(Q: np.ndarray, J: np.ndarray, w: np.ndarray) -> bool:
    return J.size == Q.shape[0] and bool(np.all(w == 1.0))


def ameliorated_gradient(g_bar, Q, J, pi, g_hat, mode: str = PRACTICAL) -> np.ndarray:
    """Inverse-probability reweighting of the sketch-and-project update.

    ``full`` keeps ``g_bar`` as control variate; ``practical`` replaces it
    with zero, which confines the result to the sketched subspace.
    """
    S, J = _sketch_rows(Q, J)
    pi = pi.pi if isinstance(pi, ProbabilityVector) else np.asarray(pi, dtype=float)
    w = 1.0 / pi[J]
    if _is_identity_sketch(Q, J, w):
        return np.array(g_hat, dtype=float, copy=True)
    W = w if np.ndim(g_hat) == 1 else w[:, None]
    if mode == FULL:
        return g_bar + S.T @ (W * (S @ (g_hat - g_bar)))
    if mode == PRACTICAL:
        return S.T @ (W * (S @ g_hat))
    raise ValueError(f"unknown estimator mode {mode!r}")


def ameliorated_hessian_subspace(H_bar, S, w, H_hat_sub) -> np.ndarray:
    """``S @ H_tilde @ S.T`` without forming the n x n estimator."""
    B = _sandwich(S, H_bar)
    Dm = np.diag(w)
    Hs = B - Dm @ (B - H_hat_sub) @ Dm
    return 0.5 * (Hs + np.swapaxes(Hs, -1, -2))


def ameliorated_hessian(H_bar, Q, J, pi, H_hat_sub) -> np.ndarray:
    S, J = _sketch_rows(Q, J)
    pi = pi.pi if isinstance(pi, ProbabilityVector) else np.asarray(pi, dtype=float)
    w = 1.0 / pi[J]
    if _is_identity_sketch(Q, J, w):
        H = Q @ H_hat_sub @ Q.T if not np.array_equal(Q, np.eye(Q.shape[0])) else np.array(H_hat_sub, dtype=float, copy=True)
        return 0.5 * (H + np.swapaxes(H, -1, -2))
    Dm = np.diag(w)
    B = _sandwich(S, H_bar)
    H = H_bar - S.T @ (Dm @ (B - H_hat_sub) @ Dm) @ S
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def ameliorated_pair(g_bar, H_bar, Q, J, pi, g_hat, H_hat_sub, mode: str = PRACTICAL) -> AmelioratedPair:
    pi_arr = pi.pi if isinstance(pi, ProbabilityVector) else np.asarray(pi, dtype=float)
    return AmelioratedPair(
        ameliorated_gradient(g_bar, Q, J, pi_arr, g_hat, mode),
        ameliorated_hessian(H_bar, Q, J, pi_arr, H_hat_sub),
        1.0 / pi_arr[np.asarray(J, dtype=int)],
    )


def gradient_estimator_variance(g_bar, Q, pi, expectation) -> float:
    pi = pi.pi if isinstance(pi, ProbabilityVector) else np.asarray(pi, dtype=float)
    return weighted_variance_norm(np.asarray(g_bar) - np.asarray(expectation), Q, pi)


def subset_probability(pi: np.ndarray, J: Sequence[int]) -> float:
    mask = np.zeros(pi.size, dtype=bool)
    mask[list(J)] = True
    return float(np.prod(np.where(mask, pi, 1.0 - pi)))


def enumerate_estimator_law(Q, pi, g_bar, g_hat_map, mode: str = FULL):
    """Exact mean and variance of the ameliorated gradient by summing over all subsets.

    ``g_hat_map`` is either a fixed n-vector or a callable taking the sorted
    index tuple ``J`` and returning that subset's model gradient.
    """
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if n > MAX_ENUMERATION_DIM:
        raise ValueError(f"enumeration over 2**{n} subsets refused (limit n <= {MAX_ENUMERATION_DIM})")
    pi = pi.pi if isinstance(pi, ProbabilityVector) else np.asarray(pi, dtype=float)
    get: Callable = g_hat_map if callable(g_hat_map) else (lambda J: g_hat_map)
    probs, values = [], []
    for size in range(n + 1):
        for J in itertools.combinations(range(n), size):
            probs.append(subset_probability(pi, J))
            values.append(ameliorated_gradient(g_bar, Q, list(J), pi, np.asarray(get(J), dtype=float), mode))
    probs = np.array(probs)
    values = np.array(values)
    mean = probs @ values
    var = float(probs @ np.sum((values - mean) ** 2, axis=1))
    return mean, var
