"""Trust-region subproblem, acceptance ratio and radius control."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

log = logging.getLogger(__name__)

REJECT = -np.inf
# Ball-constraint slack accepted on returned steps.
NORM_SLACK = 1e-10


@dataclass(frozen=True)
class TrustRegionConfig:
    delta0: float
    eta1: float = 0.05
    eta2: float = 1e-3
    nu1: float = 0.5
    nu2: float = 2.0
    delta_max: float | None = None
    growth_test: str = "radius"  # or "error-estimate": compare against eta2 * ||delta||

    def __post_init__(self):
        if self.delta_max is None:
            object.__setattr__(self, "delta_max", 1000.0 * self.delta0)
        if not 0.0 < self.nu1 < 1.0 < self.nu2:
            raise ValueError("need 0 < nu1 < 1 < nu2")
        if not 0.0 < self.delta0 < self.delta_max:
            raise ValueError("need 0 < delta0 < delta_max")
        if self.eta1 <= 0.0 or self.eta2 <= 0.0:
            raise ValueError("eta1 and eta2 must be positive")
        if self.growth_test not in ("radius", "error-estimate"):
            raise ValueError(f"unknown growth_test {self.growth_test!r}")


@dataclass(frozen=True)
class StepResult:
    d: np.ndarray
    predicted_reduction: float
    boundary_hit: bool


def _reduction(g, H, d) -> float:
    return -float(g @ d + 0.5 * d @ H @ d)


def _to_boundary(p, d, radius) -> float:
    """Largest t >= 0 with ||p + t d|| = radius."""
    a = float(d @ d)
    b = 2.0 * float(p @ d)
    c = float(p @ p) - radius**2
    return (-b + np.sqrt(max(b * b - 4.0 * a * c, 0.0))) / (2.0 * a)


def _cauchy_step(g, H, radius) -> np.ndarray:
    gn = np.linalg.norm(g)
    curv = float(g @ H @ g)
    t = radius / gn
    if curv > 0.0:
        t = min(t, gn**2 / curv)
    return -t * g


def _steihaug(g, H, radius, tol, max_iter):
    """Truncated CG. Returns (step, hit_boundary, saw_negative_curvature)."""
    p = np.zeros_like(g)
    r = g.copy()
    d = -r
    rr = float(r @ r)
    for _ in range(max_iter):
        Hd = H @ d
        dHd = float(d @ Hd)
        if dHd <= 0.0:
            return p + _to_boundary(p, d, radius) * d, True, True
        a = rr / dHd
        p_next = p + a * d
        if np.linalg.norm(p_next) >= radius:
            return p + _to_boundary(p, d, radius) * d, True, False
        p = p_next
        r = r + a * Hd
        rr_next = float(r @ r)
        if np.sqrt(rr_next) <= tol:
            break
        d = -r + (rr_next / rr) * d
        rr = rr_next
    return p, False, False


def _eigen_step(g, H, radius):
    """Global minimiser of the model on the ball via the eigendecomposition (handles the hard case)."""
    lam, V = np.linalg.eigh(H)
    gt = V.T @ g
    lo = max(0.0, -lam[0])

    def step(sigma):
        return -gt / (lam + sigma)

    scale = max(1.0, float(np.max(np.abs(lam))))
    eps = 1e-14 * scale
    with np.errstate(divide="ignore", invalid="ignore"):
        at_lo = step(lo + eps)
    norm_lo = np.linalg.norm(at_lo) if np.all(np.isfinite(at_lo)) else np.inf
    if norm_lo <= radius:
        if lam[0] > 0.0 and np.linalg.norm(step(0.0)) <= radius:
            return V @ step(0.0), False
        # hard case: pad along the leftmost eigenvector up to the boundary
        safe = lam + lo
        dt = np.where(np.abs(safe) > eps, -gt / np.where(np.abs(safe) > eps, safe, 1.0), 0.0)
        d = V @ dt
        v = V[:, 0]
        if lo == 0.0 and np.linalg.norm(d) < radius and lam[0] >= 0.0:
            return d, False
        return d + _to_boundary(d, v, radius) * v, True
    hi = lo + np.linalg.norm(g) / radius + scale
    while np.linalg.norm(step(hi)) > radius:
        hi *= 2.0
    sigma = brentq(lambda s: np.linalg.norm(step(s)) - radius, lo + eps, hi, xtol=1e-15, rtol=1e-14, maxiter=500)
    d = V @ step(sigma)
    nd = np.linalg.norm(d)
    if nd > radius:
        d *= radius / nd
    return d, True


def _is_positive_definite(H) -> bool:
    try:
        np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        return False
    return True


def solve_trsp(g, H, radius: float, tol: float | None = None, max_iter: int | None = None) -> StepResult:
    """Approximately minimise ``g'd + d'Hd/2`` over ``||d|| <= radius``.

    Truncated CG supplies the step. When CG reaches the boundary or ``H`` is
    not positive definite, a dense eigen-based global solution is also
    computed and the better of the two is kept. The Cauchy point is always a
    candidate, so the fraction-of-Cauchy decrease holds regardless.
    """
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    g = np.asarray(g, dtype=float)
    H = np.asarray(H, dtype=float)
    H = 0.5 * (H + H.T)
    k = g.size
    if not (np.all(np.isfinite(g)) and np.all(np.isfinite(H))):
        raise ValueError("g and H must be finite")
    gn = float(np.linalg.norm(g))
    if gn == 0.0:
        lam, V = np.linalg.eigh(H) if k else (np.zeros(0), np.zeros((0, 0)))
        if k == 0 or lam[0] >= 0.0:
            return StepResult(np.zeros(k), 0.0, False)
        d = radius * V[:, 0]
        return StepResult(d, _reduction(g, H, d), True)
    tol = min(0.5, np.sqrt(gn)) * gn * 1e-6 if tol is None else tol
    max_iter = 2 * k + 10 if max_iter is None else max_iter
    d, hit, negative = _steihaug(g, H, radius, tol, max_iter)
    candidates = [(d, hit), (_cauchy_step(g, H, radius), None)]
    if negative or hit or not _is_positive_definite(H):
        candidates.append(_eigen_step(g, H, radius))
    best, best_red, best_hit = None, -np.inf, False
    for cand, cand_hit in candidates:
        nc = np.linalg.norm(cand)
        if nc > radius * (1.0 + NORM_SLACK):
            cand = cand * (radius / nc)
        red = _reduction(g, H, cand)
        if red > best_red:
            best, best_red = cand, red
            best_hit = bool(cand_hit) if cand_hit is not None else np.linalg.norm(cand) >= radius * (1.0 - 1e-12)
    return StepResult(best, max(best_red, 0.0), best_hit)


def cauchy_decrease_bound(g, H, radius) -> float:
    gn = float(np.linalg.norm(g))
    return 0.5 * gn * min(radius, gn / (1.0 + float(np.linalg.norm(H, 2))))


def acceptance_ratio(f_old: float, f_new: float, predicted_reduction: float) -> float:
    if not predicted_reduction > 0.0:
        log.debug("nonpositive predicted reduction %r: step rejected", predicted_reduction)
        return REJECT
    if not np.isfinite(f_new):
        return REJECT
    return (f_old - f_new) / predicted_reduction


def update_radius(rho: float, radius: float, g_norm: float, cfg: TrustRegionConfig, error_norm: float | None = None) -> float:
    if radius <= 0.0:
        raise ValueError("radius must be positive")
    ref = radius if cfg.growth_test == "radius" or error_norm is None else error_norm
    if rho >= cfg.eta1 and g_norm >= cfg.eta2 * ref:
        return min(cfg.nu2 * radius, cfg.delta_max)
    return cfg.nu1 * radius
