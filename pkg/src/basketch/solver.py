"""Randomized basis-sketching trust-region solver and its deterministic full-space baseline.

Both drivers share one loop. Each iteration:

1. finds directions already covered by bank points near the center,
2. samples extra directions from the complement (sketching) or takes all of
   them (baseline) and evaluates the center plus radius times each,
3. fits one quadratic model per residual on the resulting sketch,
4. updates the running average estimators and forms reweighted estimates,
5. combines the residual models and takes a trust-region step in the sketch.

Interpolation points are handled in coordinates scaled by the radius; model
quantities are converted back to original units before they are stored.
"""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import GeometryConfig, PointBank, determine_interpolation_set, identify_initial_subspace
from .poly_model import PoisednessError, QuadraticModel, hessian_to_beta, solve_basis_sketch, solve_mnh_result
from .problems import BudgetExhausted, CountingOracle, ProblemSpec, evaluate
from .sketch import FULL, PRACTICAL, choose_sketch_size, make_rng, realize_subset
from .trust_region import TrustRegionConfig, acceptance_ratio, solve_trsp, update_radius

log = logging.getLogger(__name__)

SKETCHING = "sketching"
BASELINE = "deterministic-baseline"
UNWEIGHTED = "unweighted"
GAUSS_NEWTON = "gauss-newton"
SIMPLEX_INIT = "simplex"
ZERO_INIT = "zero"

HISTORY_COLUMNS = ("k", "f", "delta", "rho", "p_k", "J_size", "evals", "accepted")


def default_radius(x0) -> float:
    return 0.1 * max(1.0, float(np.max(np.abs(x0), initial=0.0)))


@dataclass(frozen=True)
class StopConfig:
    delta_min: float
    g_min: float = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    tr: TrustRegionConfig
    geo: GeometryConfig
    C: float
    stop: StopConfig
    max_evals: int
    b0: int = 1
    mode: str = SKETCHING
    estimator_mode: str = PRACTICAL
    seed: int = 0
    combine: str = UNWEIGHTED
    init: str = SIMPLEX_INIT
    f_target: float | None = None
    max_iter: int | None = None

    def __post_init__(self):
        if self.mode not in (SKETCHING, BASELINE):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.estimator_mode not in (PRACTICAL, FULL):
            raise ValueError(f"unknown estimator_mode {self.estimator_mode!r}")
        if self.combine not in (UNWEIGHTED, GAUSS_NEWTON):
            raise ValueError(f"unknown combine {self.combine!r}")
        if self.init not in (SIMPLEX_INIT, ZERO_INIT):
            raise ValueError(f"unknown init {self.init!r}")
        if self.C < 0.0 or self.b0 < 1:
            raise ValueError("need C >= 0 and b0 >= 1")

    @classmethod
    def default(cls, n: int, delta0: float = 1.0, max_evals: int | None = None, **overrides) -> SolverConfig:
        tr_kw = {k: overrides.pop(k) for k in ("eta1", "eta2", "nu1", "nu2", "delta_max", "growth_test") if k in overrides}
        geo_kw = {k: overrides.pop(k) for k in ("theta1", "theta2", "Lambda", "max_points") if k in overrides}
        cfg = dict(
            tr=TrustRegionConfig(delta0=delta0, **tr_kw),
            geo=GeometryConfig.default(n, **geo_kw),
            C=0.01 * np.sqrt(n),
            stop=StopConfig(delta_min=1e-7 * delta0),
            max_evals=100 * (n + 1) if max_evals is None else max_evals,
        )
        cfg.update(overrides)
        return cls(**cfg)

    def with_mode(self, mode: str) -> SolverConfig:
        return replace(self, mode=mode)


@dataclass
class ComponentModelSet:
    """Per-residual models at the center: gradients as columns of ``g`` (k x m), Hessians ``H`` (m x k x k)."""

    g: np.ndarray
    H: np.ndarray
    f: np.ndarray

    def __post_init__(self):
        if self.g.shape[1] != self.f.size or self.H.shape[0] != self.f.size:
            raise ValueError("component count mismatch")


def combine_least_squares_model(models: ComponentModelSet, form: str = UNWEIGHTED) -> QuadraticModel:
    """Model of the sum of squares from per-residual models.

    ``unweighted`` gives ``sum f_i g_i`` and ``sum (g_i g_i' + H_i)``, a model
    of half the objective with unweighted residual curvature.
    ``gauss-newton`` gives ``2 sum f_i g_i`` and ``2 sum (g_i g_i' + f_i H_i)``.
    """
    G, f = models.g, models.f
    if form == UNWEIGHTED:
        g = G @ f
        H = G @ G.T + models.H.sum(axis=0)
    elif form == GAUSS_NEWTON:
        g = 2.0 * (G @ f)
        H = 2.0 * (G @ G.T + np.tensordot(f, models.H, axes=1))
    else:
        raise ValueError(f"unknown combine form {form!r}")
    return QuadraticModel(np.zeros(G.shape[0]), g, H, float(f @ f))


def model_scale(form: str) -> float:
    """Factor converting model decrease into objective units."""
    return 2.0 if form == UNWEIGHTED else 1.0


@dataclass
class EstimatorSet:
    """Per-residual average estimators: gradients (n x m) and Hessians (m x n x n)."""

    g_bar: np.ndarray
    H_bar: np.ndarray


@dataclass
class IterationRecord:
    k: int
    f: float
    delta: float
    rho: float
    p_k: float
    J_size: int
    evals: int
    accepted: bool
    x: list = field(default_factory=list)
    new_evals: int = 0
    step_evaluated: bool = False
    model_points: int = 0


@dataclass
class RunHistory:
    problem: str
    n: int
    solver: str
    seed: int
    records: list[IterationRecord] = field(default_factory=list)
    eval_totals: list[float] = field(default_factory=list)
    status: str = "running"

    @property
    def x_final(self) -> np.ndarray:
        return np.array(self.records[-1].x)

    @property
    def f_final(self) -> float:
        return self.records[-1].f

    @property
    def evals(self) -> int:
        return len(self.eval_totals)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS)
        for r in self.records:
            w.writerow([r.k, repr(float(r.f)), repr(float(r.delta)), repr(float(r.rho)), repr(float(r.p_k)), r.J_size, r.evals, int(r.accepted)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    def to_dict(self) -> dict:
        return {
            "problem": self.problem,
            "n": self.n,
            "solver": self.solver,
            "seed": self.seed,
            "status": self.status,
            "records": [asdict(r) for r in self.records],
            "eval_totals": list(self.eval_totals),
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_json(cls, text: str) -> RunHistory:
        d = json.loads(text)
        recs = [IterationRecord(**r) for r in d.pop("records")]
        return cls(records=recs, **d)


def _evaluate_into(oracle: CountingOracle, bank: PointBank, y: np.ndarray) -> int:
    return bank.append(y, evaluate(oracle, y))


def _as_oracle(problem, budget=None) -> CountingOracle:
    return problem if isinstance(problem, CountingOracle) else CountingOracle(problem, budget)


def init_average_gradient(problem, x0, delta0: float, bank: PointBank | None = None, method: str = SIMPLEX_INIT):
    """Evaluate ``x0`` (and ``x0 + delta0 e_i`` for the simplex option) and seed the estimators.

    Returns ``(EstimatorSet, bank)``; the gradient columns are per-residual
    forward differences and the Hessians start at zero.
    """
    oracle = _as_oracle(problem)
    spec = oracle.inner
    n, m = spec.n, spec.m
    x0 = np.asarray(x0, dtype=float)
    if oracle.budget is not None and oracle.budget - oracle.count < (n + 1 if method == SIMPLEX_INIT else 1):
        raise BudgetExhausted("budget too small for initialization")
    bank = PointBank(n, m) if bank is None else bank
    i0 = _evaluate_into(oracle, bank, x0)
    G = np.zeros((n, m))
    if method == SIMPLEX_INIT:
        for i in range(n):
            y = x0.copy()
            y[i] += delta0
            j = _evaluate_into(oracle, bank, y)
            G[i] = (bank.residuals[j] - bank.residuals[i0]) / delta0
    return EstimatorSet(G, np.zeros((m, n, n))), bank


def _stop_reason(cfg: SolverConfig, radius: float, g_norm: float, best_f: float, k: int) -> str | None:
    if cfg.f_target is not None and best_f <= cfg.f_target:
        return "target"
    if radius < cfg.stop.delta_min:
        return "min-radius"
    if g_norm < cfg.stop.g_min and radius < 10.0 * cfg.stop.delta_min:
        return "stationary"
    if cfg.max_iter is not None and k >= cfg.max_iter:
        return "max-iter"
    return None


def _fit(bank, pts, x, radius, S, S_perp, full, prior):
    Y = (bank.points[pts] - x) / radius
    R = bank.residuals[pts]
    if full:
        return Y, solve_mnh_result(Y, R, prior)
    return Y, solve_basis_sketch(S, S_perp, Y, R, (prior, None))


def _sandwich(S, H):
    return S @ H @ S.T


def _symmetrize(H):
    return 0.5 * (H + np.swapaxes(H, -1, -2))


def _run(problem: ProblemSpec, x0, cfg: SolverConfig, sketching: bool, label: str) -> RunHistory:
    n, m = problem.n, problem.m
    x0 = np.asarray(x0, dtype=float)
    oracle = CountingOracle(problem, cfg.max_evals)
    rng = make_rng(cfg.seed)
    hist = RunHistory(problem.name, n, label, cfg.seed)
    est, bank = init_average_gradient(oracle, x0, cfg.tr.delta0, method=cfg.init)
    scale = model_scale(cfg.combine)
    x_idx = 0
    radius = cfg.tr.delta0
    g_norm = np.inf
    hist.records.append(IterationRecord(0, float(bank.totals[0]), radius, np.nan, 0.0, 0, oracle.count, True, x0.tolist()))

    def proxy(G, r):
        return 2.0 * (G @ r) if cfg.combine == GAUSS_NEWTON else G @ r

    delta_proxy = proxy(est.g_bar, bank.residuals[0])
    k = 0
    max_iter = cfg.max_iter if cfg.max_iter is not None else 10 * cfg.max_evals
    try:
        while True:
            best_f = float(np.min(bank.totals))
            reason = _stop_reason(cfg, radius, g_norm, best_f, k) or ("max-iter" if k >= max_iter else None)
            if reason:
                hist.status = reason
                break
            k += 1
            x = bank.points[x_idx].copy()
            rx = bank.residuals[x_idx].copy()
            fx = float(bank.totals[x_idx])

            sel = identify_initial_subspace(bank, x, radius, cfg.geo)
            s0 = sel.rank
            Qc = sel.S_perp.T
            r = n - s0
            if sketching and r:
                b, probs = choose_sketch_size(radius, Qc, cfg.C, delta_proxy, cfg.b0, n)
                pi_c = probs.pi
            else:
                b, pi_c = r, np.ones(r)
            J_c = realize_subset(pi_c, rng).J
            new_idx, kept = [], []
            for i in J_c:
                j = _evaluate_into(oracle, bank, x + radius * Qc[:, i])
                # a failed evaluation cannot anchor a direction; drop it from the sketch
                if np.isfinite(bank.totals[j]):
                    new_idx.append(j)
                    kept.append(i)
            J_c = np.array(kept, dtype=int)
            S = np.vstack([sel.S, Qc[:, J_c].T])
            s = S.shape[0]
            w = np.concatenate([np.ones(s0), 1.0 / pi_c[J_c]])
            rec = IterationRecord(k, fx, radius, np.nan, float(s0 + b), s, oracle.count, False, x.tolist(), len(new_idx))
            if s == 0:
                hist.records.append(rec)
                continue

            full = s == n
            if full:
                S_geo, Sp_geo = np.eye(n), np.zeros((0, n))
            else:
                S_geo = S
                Sp_geo = Qc[:, np.setdiff1d(np.arange(r), J_c)].T
            Z = [x_idx] + sel.contributing_points + new_idx
            pts = determine_interpolation_set(S_geo, Sp_geo, Z, bank, x, radius, cfg.geo).points
            prior = hessian_to_beta(radius**2 * est.H_bar)
            try:
                Y, res = _fit(bank, pts, x, radius, S_geo, Sp_geo, full, prior)
            except PoisednessError:
                log.debug("iteration %d: interpolation set not poised, using seed set", k)
                try:
                    pts = Z
                    Y, res = _fit(bank, pts, x, radius, S_geo, Sp_geo, full, prior)
                except PoisednessError:
                    radius = cfg.tr.nu1 * radius
                    hist.records.append(rec)
                    continue
            rec.model_points = len(pts)

            # sketched model quantities in original units: S g_hat (s x m) and S H_hat S' (m x s x s)
            A = res.alpha[1:] / radius
            YS = Y if full else Y @ S.T
            curv = YS.T @ (res.lam.T[:, :, None] * YS[None]) / (2.0 * radius**2)
            B = est.H_bar if full else _sandwich(S, est.H_bar)
            H_hat_sub = _symmetrize(curv + B)

            identity_weights = bool(np.all(w == 1.0))
            if identity_weights:
                G_sub, H_sub = A, H_hat_sub
            else:
                ww = np.outer(w, w)
                G_sub = w[:, None] * A
                H_sub = _symmetrize(B - ww * (B - H_hat_sub))
            if full:
                coords = None
            elif cfg.estimator_mode == FULL:
                # full-space estimator: keep the averages as control variates off the sketch
                G_sub = est.g_bar + S.T @ (w[:, None] * (A - S @ est.g_bar))
                H_sub = _symmetrize(est.H_bar - S.T @ (B - H_sub) @ S)
                coords = None
            else:
                coords = S

            # sketch-and-project averages
            if full:
                est.g_bar = A.copy()
                est.H_bar = H_hat_sub.copy()
            else:
                est.g_bar = est.g_bar + S.T @ (A - S @ est.g_bar)
                est.H_bar = _symmetrize(est.H_bar - S.T @ (B - H_hat_sub) @ S)

            model = combine_least_squares_model(ComponentModelSet(G_sub, H_sub, rx), cfg.combine)
            step = solve_trsp(model.g, model.H, radius)
            g_norm = scale * float(np.linalg.norm(model.g))
            pred = scale * step.predicted_reduction
            d = step.d if coords is None else coords.T @ step.d
            if pred > 0.0:
                j = _evaluate_into(oracle, bank, x + d)
                rec.step_evaluated = True
                rho = acceptance_ratio(fx, float(bank.totals[j]), pred)
            else:
                rho = acceptance_ratio(fx, fx, pred)
            accepted = rho >= cfg.tr.eta1
            if accepted:
                x_idx = j
            radius = update_radius(rho, radius, g_norm, cfg.tr, float(np.linalg.norm(delta_proxy)))
            delta_proxy = proxy(est.g_bar, bank.residuals[x_idx])
            rec.rho = float(rho)
            rec.accepted = bool(accepted)
            rec.f = float(bank.totals[x_idx])
            rec.x = bank.points[x_idx].tolist()
            rec.evals = oracle.count
            hist.records.append(rec)
    except BudgetExhausted:
        hist.status = "budget"
        last = hist.records[-1]
        if last.evals != oracle.count:
            hist.records.append(
                IterationRecord(k, float(bank.totals[x_idx]), radius, np.nan, np.nan, 0, oracle.count, False, bank.points[x_idx].tolist())
            )
    hist.eval_totals = bank.totals.tolist()
    return hist


def run_basis_sketching(problem: ProblemSpec, x0, cfg: SolverConfig) -> RunHistory:
    return _run(problem, x0, cfg, sketching=True, label="sketch")


def run_deterministic_baseline(problem: ProblemSpec, x0, cfg: SolverConfig) -> RunHistory:
    return _run(problem, x0, cfg, sketching=False, label="baseline")


def solve(problem: ProblemSpec, solver: str = "sketch", seed: int = 0, x0=None, **overrides) -> RunHistory:
    """Convenience entry point with default configuration for ``problem``."""
    x0 = problem.x0 if x0 is None else np.asarray(x0, dtype=float)
    overrides.setdefault("delta0", default_radius(x0))
    cfg = SolverConfig.default(problem.n, seed=seed, **overrides)
    runner = run_basis_sketching if solver == "sketch" else run_deterministic_baseline
    return runner(problem, x0, cfg)
