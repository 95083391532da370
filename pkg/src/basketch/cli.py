"""Command-line interface.

    basketch bench run --config campaign.ini [--out results]
    basketch bench profile --dir results --tau 1e-3 --agg median
    basketch problems list
    basketch solve --problem extended-rosenbrock --n 10 --solver sketch --seed 0
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bench import MEDIAN, WORST, CampaignConfig, profile_from_dir, run_campaign
from .problems import describe_problems, get_problem
from .solver import UNWEIGHTED, GAUSS_NEWTON, solve


def _bench_run(args) -> int:
    cfg = CampaignConfig.from_file(args.config)
    if args.workers is not None:
        cfg.workers = args.workers
    out = Path(args.out) if args.out else Path(args.config).with_suffix("").with_name(Path(args.config).stem + "_results")
    run_campaign(cfg, out)
    print(out)
    return 0


def _bench_profile(args) -> int:
    table = profile_from_dir(args.dir, args.tau, args.agg)
    text = table.to_csv(args.out)
    if args.out is None:
        sys.stdout.write(text)
    return 0


def _problems_list(args) -> int:
    for name, text in describe_problems().items():
        print(f"{name}\t{text}")
    return 0


def _solve(args) -> int:
    problem = get_problem(args.problem, args.n)
    overrides = {"combine": args.combine}
    if args.max_evals is not None:
        overrides["max_evals"] = args.max_evals
    hist = solve(problem, "sketch" if args.solver == "sketch" else "baseline", seed=args.seed, **overrides)
    if args.history:
        hist.to_csv(args.history)
    if args.json:
        hist.to_json(args.json)
    print(json.dumps({"problem": problem.name, "n": problem.n, "solver": args.solver, "seed": args.seed, "status": hist.status,
                      "evals": hist.evals, "f_final": hist.f_final, "f_star": problem.f_star}))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="basketch", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    bench = sub.add_parser("bench", help="benchmark campaigns and profiles")
    bsub = bench.add_subparsers(dest="bench_command", required=True)
    run = bsub.add_parser("run", help="run a campaign from an INI config")
    run.add_argument("--config", required=True)
    run.add_argument("--out", help="results directory (default: <config>_results)")
    run.add_argument("--workers", type=int)
    run.set_defaults(func=_bench_run)
    prof = bsub.add_parser("profile", help="emit a performance profile CSV")
    prof.add_argument("--dir", required=True)
    prof.add_argument("--tau", type=float, required=True)
    prof.add_argument("--agg", choices=(MEDIAN, WORST), default=MEDIAN)
    prof.add_argument("--out", help="write CSV here instead of stdout")
    prof.set_defaults(func=_bench_profile)

    problems = sub.add_parser("problems", help="problem registry")
    psub = problems.add_subparsers(dest="problems_command", required=True)
    psub.add_parser("list", help="list registered problems").set_defaults(func=_problems_list)

    sv = sub.add_parser("solve", help="run one solver on one problem")
    sv.add_argument("--problem", required=True)
    sv.add_argument("--n", type=int, required=True)
    sv.add_argument("--solver", choices=("sketch", "baseline"), default="sketch")
    sv.add_argument("--seed", type=int, default=0)
    sv.add_argument("--max-evals", type=int)
    sv.add_argument("--combine", choices=(UNWEIGHTED, GAUSS_NEWTON), default=UNWEIGHTED)
    sv.add_argument("--history", help="write the history CSV here")
    sv.add_argument("--json", help="write the full history JSON here")
    sv.set_defaults(func=_solve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
