"""Benchmark campaigns, the tau-convergence metric and performance profiles.

Campaign files are INI documents::

    [campaign]
    solvers = sketch, baseline
    problems = extended-rosenbrock:20, broyden-tridiagonal:10
    seeds = 0-29            ; ranges and comma lists
    budget = 200            ; evaluations per run, in units of n + 1
    taus = 1e-1, 1e-3, 1e-5
    workers = 1
    stop_at_tau = true      ; stop a run once the smallest tau is met

    [solver.sketch]         ; optional; keys override SolverConfig defaults
    mode = sketching
    combine = unweighted

Solvers without a section use the built-in presets ``sketch`` and ``baseline``.
"""
from __future__ import annotations

import configparser
import csv
import hashlib
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .problems import get_problem
from .solver import BASELINE, SKETCHING, RunHistory, SolverConfig, default_radius, run_basis_sketching, run_deterministic_baseline

log = logging.getLogger(__name__)

MEDIAN = "median"
WORST = "worst"
PRESETS = {"sketch": {"mode": SKETCHING}, "baseline": {"mode": BASELINE}}
_FLOAT_KEYS = {"C", "eta1", "eta2", "nu1", "nu2", "theta1", "theta2", "delta0", "Lambda"}
_INT_KEYS = {"b0", "max_points"}


def default_alpha_grid() -> np.ndarray:
    return np.geomspace(1.0, 64.0, 64)


def tau_target(f0: float, f_star: float, tau: float) -> float:
    return f_star + tau * (f0 - f_star)


def convergence_metric(history, f0: float, f_star: float, tau: float, n: int) -> float:
    """Evaluations (in units of n + 1) until some evaluated point meets the tau test, else inf.

    ``history`` is a :class:`RunHistory` or a sequence of evaluated totals in
    evaluation order.
    """
    if f0 == f_star:
        return 0.0
    if f0 < f_star:
        raise ValueError("f0 must not be below f_star")
    totals = np.asarray(history.eval_totals if isinstance(history, RunHistory) else history, dtype=float)
    hit = np.flatnonzero(totals <= tau_target(f0, f_star, tau))
    return (hit[0] + 1) / (n + 1) if hit.size else math.inf


def aggregate(values, agg: str = MEDIAN) -> float:
    v = np.atleast_1d(np.asarray(values, dtype=float))
    if agg == MEDIAN:
        return float(np.median(v))
    if agg == WORST:
        return float(np.max(v))
    raise ValueError(f"unknown aggregation {agg!r}")


@dataclass
class ProfileTable:
    """Per-run N values and the resulting profile curves.

    ``reference`` holds, per problem, the best median-aggregated N over
    solvers; both aggregation modes are measured against it.
    """

    alphas: np.ndarray
    solvers: list[str]
    problems: list[str]
    N: dict
    aggregated: dict
    reference: dict
    values: dict
    agg: str = MEDIAN
    excluded: list[str] = field(default_factory=list)

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["alpha"] + self.solvers)
        for i, a in enumerate(self.alphas):
            w.writerow([repr(float(a))] + [repr(float(self.values[s][i])) for s in self.solvers])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def performance_profile(table: Mapping[str, Mapping[str, object]], alpha_grid=None, agg: str = MEDIAN) -> ProfileTable:
    """Fraction of problems each solver solves within ``alpha`` times the best solver's N.

    ``table[solver][problem]`` is a single N or a sequence of per-seed N.
    Problems no solver ever solves are excluded.
    """
    alphas = default_alpha_grid() if alpha_grid is None else np.asarray(alpha_grid, dtype=float)
    solvers = list(table)
    problems = sorted({p for s in solvers for p in table[s]})
    med = {s: {p: aggregate(table[s].get(p, math.inf), MEDIAN) for p in problems} for s in solvers}
    agg_N = {s: {p: aggregate(table[s].get(p, math.inf), agg) for p in problems} for s in solvers}
    reference, kept, excluded = {}, [], []
    for p in problems:
        best = min(med[s][p] for s in solvers)
        if math.isfinite(best):
            reference[p] = best
            kept.append(p)
        else:
            excluded.append(p)
            log.info("problem %s solved by no solver; excluded from profile", p)
    values = {}
    for s in solvers:
        if not kept:
            values[s] = np.zeros(alphas.size)
            continue
        Ns = np.array([agg_N[s][p] for p in kept])
        refs = np.array([reference[p] for p in kept])
        values[s] = np.array([np.count_nonzero(Ns <= a * refs) / len(kept) for a in alphas])
    N = {s: {p: list(np.atleast_1d(table[s].get(p, math.inf)).astype(float)) for p in problems} for s in solvers}
    return ProfileTable(alphas, solvers, kept, N, agg_N, reference, values, agg, excluded)


# --- campaigns ------------------------------------------------------------------


def _parse_seeds(text: str) -> list[int]:
    seeds: list[int] = []
    for part in text.replace(" ", "").split(","):
        if not part:
            continue
        if "-" in part:
            lo, hi = part.split("-")
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _parse_value(key: str, raw: str):
    if key in _FLOAT_KEYS:
        return float(raw)
    if key in _INT_KEYS:
        return int(raw)
    return raw.strip()


@dataclass
class CampaignConfig:
    solvers: dict[str, dict]
    problems: list[tuple[str, int]]
    seeds: list[int] = field(default_factory=lambda: list(range(30)))
    budget: int = 200
    taus: list[float] = field(default_factory=lambda: [1e-1, 1e-3, 1e-5])
    workers: int = 1
    stop_at_tau: bool = True
    source: str = ""

    def __post_init__(self):
        if not (self.solvers and self.problems and self.seeds and self.taus):
            raise ValueError("solvers, problems, seeds and taus must be nonempty")
        if not all(0.0 < t < 1.0 for t in self.taus):
            raise ValueError("taus must lie in (0, 1)")
        if self.budget < 1:
            raise ValueError("budget must be positive")

    @classmethod
    def from_text(cls, text: str) -> CampaignConfig:
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        cp.optionxform = str
        cp.read_string(text)
        c = cp["campaign"]
        names = [s.strip() for s in c["solvers"].split(",") if s.strip()]
        solvers = {}
        for name in names:
            section = f"solver.{name}"
            if cp.has_section(section):
                solvers[name] = {k: _parse_value(k, v) for k, v in cp[section].items()}
            elif name in PRESETS:
                solvers[name] = dict(PRESETS[name])
            else:
                raise ValueError(f"solver {name!r} has no [{section}] section and is not a preset")
        problems = []
        for item in c["problems"].split(","):
            if item.strip():
                name, n = item.strip().rsplit(":", 1)
                problems.append((name.strip(), int(n)))
        return cls(
            solvers=solvers,
            problems=problems,
            seeds=_parse_seeds(c.get("seeds", "0-29")),
            budget=c.getint("budget", 200),
            taus=[float(t) for t in c.get("taus", "1e-1, 1e-3, 1e-5").split(",")],
            workers=c.getint("workers", 1),
            stop_at_tau=c.getboolean("stop_at_tau", True),
            source=text,
        )

    @classmethod
    def from_file(cls, path) -> CampaignConfig:
        return cls.from_text(Path(path).read_text())

    def content_hash(self) -> str:
        payload = json.dumps(
            {
                "solvers": self.solvers,
                "problems": self.problems,
                "seeds": self.seeds,
                "budget": self.budget,
                "taus": self.taus,
                "stop_at_tau": self.stop_at_tau,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()


def cell_id(solver: str, problem: str, n: int, seed: int) -> str:
    return f"{solver}__{problem}-{n}__s{seed}"


def _solver_config(preset: dict, n: int, seed: int, x0, budget: int, f_target) -> SolverConfig:
    kw = dict(preset)
    kw.setdefault("delta0", default_radius(x0))
    return SolverConfig.default(n, max_evals=budget * (n + 1), seed=seed, f_target=f_target, **kw)


def _run_cell(args) -> dict:
    solver, preset, name, n, seed, budget, taus, stop_at_tau = args
    try:
        problem = get_problem(name, n)
        f0 = problem.total(problem.x0)
        target = tau_target(f0, problem.f_star, min(taus)) if stop_at_tau else None
        cfg = _solver_config(preset, n, seed, problem.x0, budget, target)
        runner = run_deterministic_baseline if cfg.mode == BASELINE else run_basis_sketching
        hist = runner(problem, problem.x0, cfg)
        return {"history": hist.to_dict(), "f0": f0, "f_star": problem.f_star, "error": None}
    except Exception as exc:  # a failing cell is recorded, not fatal
        log.exception("cell %s failed", cell_id(solver, name, n, seed))
        return {"history": None, "error": f"{type(exc).__name__}: {exc}"}


def _cell_summary(solver, name, n, seed, result, taus) -> dict:
    row = {"solver": solver, "problem": name, "n": n, "seed": seed, "error": result["error"]}
    if result["history"] is None:
        row.update(status="error", evals=0, f_final=math.inf, N={repr(t): math.inf for t in taus})
        return row
    h = result["history"]
    row.update(
        status=h["status"],
        evals=len(h["eval_totals"]),
        f0=result["f0"],
        f_star=result["f_star"],
        f_final=h["records"][-1]["f"],
        N={repr(t): convergence_metric(h["eval_totals"], result["f0"], result["f_star"], t, n) for t in taus},
    )
    return row


def run_campaign(cfg: CampaignConfig, out_dir) -> Path:
    """Run every solver x problem x seed cell, writing histories, a summary and profiles.

    Cells whose stored hash matches the current configuration are not rerun.
    Deterministic solvers run once per problem and their history is reused
    for every seed.
    """
    out = Path(out_dir)
    hist_dir = out / "histories"
    hist_dir.mkdir(parents=True, exist_ok=True)
    chash = cfg.content_hash()
    started = time.time()

    cells, todo = [], []
    for solver, preset in cfg.solvers.items():
        deterministic = preset.get("mode", SKETCHING) == BASELINE
        for name, n in cfg.problems:
            for seed in cfg.seeds:
                run_seed = cfg.seeds[0] if deterministic else seed
                cells.append((solver, name, n, seed, run_seed))
    results: dict[tuple, dict] = {}
    for solver, name, n, seed, run_seed in cells:
        path = hist_dir / f"{cell_id(solver, name, n, seed)}.json"
        if path.exists():
            stored = json.loads(path.read_text())
            if stored.get("cell_hash") == chash:
                results[(solver, name, n, seed)] = stored["result"]
                continue
        key = (solver, name, n, run_seed)
        if key not in todo:
            todo.append(key)
    args = [(s, cfg.solvers[s], name, n, rs, cfg.budget, cfg.taus, cfg.stop_at_tau) for s, name, n, rs in todo]
    if cfg.workers > 1 and len(args) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            fresh = dict(zip(todo, pool.map(_run_cell, args)))
    else:
        fresh = {key: _run_cell(a) for key, a in zip(todo, args)}

    rows = []
    for solver, name, n, seed, run_seed in cells:
        cid = cell_id(solver, name, n, seed)
        if (solver, name, n, seed) not in results:
            result = fresh[(solver, name, n, run_seed)]
            if result["history"] is not None:
                result = dict(result, history=dict(result["history"], seed=seed))
                RunHistory.from_json(json.dumps(result["history"])).to_csv(hist_dir / f"{cid}.csv")
            (hist_dir / f"{cid}.json").write_text(json.dumps({"cell_hash": chash, "result": result}, sort_keys=True))
            results[(solver, name, n, seed)] = result
        rows.append(_cell_summary(solver, name, n, seed, results[(solver, name, n, seed)], cfg.taus))

    summary = {"config_hash": chash, "taus": cfg.taus, "solvers": list(cfg.solvers), "cells": rows}
    (out / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=1))
    (out / "metadata.json").write_text(
        json.dumps({"started": started, "finished": time.time(), "cells_run": len(todo), "cells_total": len(cells)}, indent=1)
    )
    if cfg.source:
        (out / "campaign.ini").write_text(cfg.source)
    write_profiles(out)
    return out


def load_table(summary: dict, tau: float) -> dict:
    table: dict = {s: {} for s in summary["solvers"]}
    for row in summary["cells"]:
        key = f"{row['problem']}-{row['n']}"
        table[row["solver"]].setdefault(key, []).append(row["N"][repr(float(tau))])
    return table


def profile_from_dir(results_dir, tau: float, agg: str = MEDIAN, alpha_grid=None) -> ProfileTable:
    summary = json.loads((Path(results_dir) / "summary.json").read_text())
    return performance_profile(load_table(summary, tau), alpha_grid, agg)


def write_profiles(results_dir) -> list[Path]:
    out = Path(results_dir)
    summary = json.loads((out / "summary.json").read_text())
    prof_dir = out / "profiles"
    prof_dir.mkdir(exist_ok=True)
    paths = []
    for tau in summary["taus"]:
        for agg in (MEDIAN, WORST):
            path = prof_dir / f"profile_tau{tau:g}_{agg}.csv"
            performance_profile(load_table(summary, tau), None, agg).to_csv(path)
            paths.append(path)
    return paths


def median_evals(summary: dict, tau: float) -> dict:
    """Median N per (solver, problem) from a summary document."""
    table = load_table(summary, tau)
    return {s: {p: aggregate(v, MEDIAN) for p, v in probs.items()} for s, probs in table.items()}


def seeds_solved(values: Sequence[float]) -> int:
    return sum(1 for v in values if math.isfinite(v))
