"""Command-line interface: ``matchrank {generate,optimize,evaluate,sweep}``.

Exit codes: 0 success, 1 usage error, 2 numerical/solver failure, 3 I/O failure.

CSV schemas
-----------
trace (optimize):   iteration,lower_bound,gap,wall_ms
report (evaluate):  policy,metric,value
gains (evaluate):   name,candidate_index,value
histogram:          name,bin_lo,bin_hi,count
sweep:              sweep,setting,n,lambda,structure,exam,seed,policy,metric,value,status
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import analysis
from .market import (
    FIXTURES,
    STRUCTURES,
    ExaminationModel,
    SyntheticSpec,
    generate_synthetic,
    load_market,
    proposition5_instance,
    proposition5_stable_rankings,
    proposition5_strategic_rankings,
    save_market,
    theorem2_instance,
    theorem2_strategic_rankings,
)
from .objective import evaluate as evaluate_exact
from .optimize import (
    FRANK_WOLFE,
    PROJECTED_GRADIENT,
    OptimizerConfig,
    SinkhornError,
    optimize,
    two_stage_rerank,
)
from .policy import Policy, load_policy, naive_policy, reciprocal_policy, save_policy
from .simulate import SimulationConfig, simulate_market

logger = logging.getLogger("matchrank")

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_IO = 0, 1, 2, 3

BASELINES = ("naive", "reciprocal", "social_welfare")
FIXTURE_POLICIES = {
    "proposition5-stable": lambda market: Policy.from_rankings(proposition5_stable_rankings()),
    "proposition5-strategic": lambda market: Policy.from_rankings(proposition5_strategic_rankings()),
    "theorem2-strategic": lambda market: Policy.from_rankings(
        theorem2_strategic_rankings(market.num_candidates)
    ),
}
SWEEP_DEFAULTS = {
    "lambda": "0,0.25,0.5,0.75,1",
    "structure": "reversed,random,similar",
    "exam": "inv,invlog,invexp",
    "size": "10,20,40",
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_market_source(p, synthetic=True):
    p.add_argument("--market", help="market JSON file")
    p.add_argument("--fixture", choices=FIXTURES, help="named constructed instance")
    p.add_argument("--m", type=int, default=2, help="examination cutoff for the theorem2 fixture")
    if synthetic:
        p.add_argument("--n", type=int, help="number of employers (synthetic market)")
        p.add_argument("--lambda", dest="lam", type=float, default=0.5, help="crowding level")
        p.add_argument("--structure", choices=STRUCTURES, default="random")
        p.add_argument("--exam", choices=("inv", "invlog", "invexp"), default="inv")
        p.add_argument("--candidate-ratio", type=float, default=1.5)
        p.add_argument("--noise-sd", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)


def _add_optimizer(p):
    p.add_argument("--method", choices=(FRANK_WOLFE, PROJECTED_GRADIENT), default=FRANK_WOLFE)
    p.add_argument("--steps", type=int, default=50)
    p.add_argument("--lr", type=float, default=0.2)
    p.add_argument("--lr-decay", action="store_true", help="use step size 1/(t+2)")
    p.add_argument("--eps", type=float, default=1e-3, help="stopping threshold")
    p.add_argument("--shortlist", type=int, help="re-rank only the reciprocal top-K")


def _add_simulation(p, default_samples):
    p.add_argument("--mc-samples", type=int, default=default_samples, help="0 disables simulation")
    p.add_argument("--mc-runs", type=int, default=10)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="matchrank", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a market JSON file")
    _add_market_source(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("optimize", help="optimise a social-welfare policy")
    _add_market_source(p)
    _add_optimizer(p)
    p.add_argument("--out", required=True, help="policy JSON path")
    p.add_argument("--trace", help="trace CSV path (default: <out>.trace.csv)")
    p.add_argument("--timing", action="store_true", help="fill the wall_ms trace column")

    p = sub.add_parser("evaluate", help="evaluate policies exactly and by simulation")
    _add_market_source(p)
    _add_optimizer(p)
    _add_simulation(p, 0)
    p.add_argument(
        "--policy", action="append", default=[],
        help=f"policy file or one of {', '.join(BASELINES + tuple(FIXTURE_POLICIES))}; repeatable",
    )
    p.add_argument("--gains", action="store_true", help="adoption/retention/switch gains vs naive")
    p.add_argument("--histograms", action="store_true", help="utility histograms")
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("sweep", help="grid of synthetic experiments")
    p.add_argument("--sweep", choices=tuple(SWEEP_DEFAULTS), required=True)
    p.add_argument("--values", help="comma-separated settings (defaults per sweep kind)")
    p.add_argument("--n", type=int, default=20)
    p.add_argument("--lambda", dest="lam", type=float, default=0.5)
    p.add_argument("--structure", choices=STRUCTURES, default="random")
    p.add_argument("--exam", choices=("inv", "invlog", "invexp"), default="inv")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--policies", default=",".join(BASELINES))
    _add_optimizer(p)
    _add_simulation(p, 0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="results CSV path")
    return parser


def _synthetic_spec(args) -> SyntheticSpec:
    return SyntheticSpec(
        n=args.n, candidate_ratio=args.candidate_ratio, lam=args.lam, structure=args.structure,
        noise_sd=args.noise_sd, seed=args.seed, exam=ExaminationModel.from_name(args.exam),
    )


def _load_market_source(args):
    sources = sum(x is not None for x in (args.market, args.fixture, getattr(args, "n", None)))
    if sources != 1:
        raise UsageError("give exactly one of --market, --fixture or --n")
    if args.market:
        return load_market(args.market)
    if args.fixture == "proposition5":
        return proposition5_instance()
    if args.fixture == "theorem2":
        # theorem2 is square; --n sets its size when given via --fixture only
        return theorem2_instance(args.theorem2_n, args.m)
    return generate_synthetic(_synthetic_spec(args))


def _optimizer_config(args) -> OptimizerConfig:
    return OptimizerConfig(
        method=args.method, steps=args.steps, learning_rate=args.lr, decaying=args.lr_decay,
        stop_epsilon=args.eps, seed=args.seed,
    )


def _social_welfare_policy(market, args):
    config = _optimizer_config(args)
    if args.shortlist:
        return two_stage_rerank(market, min(args.shortlist, market.num_employers), config)
    return optimize(market, config)


def cmd_generate(args) -> int:
    market = _load_market_source(args)
    save_market(market, args.out)
    print(f"wrote {args.out}: {market.num_candidates} candidates x {market.num_employers} employers")
    return EXIT_OK


def cmd_optimize(args) -> int:
    market = _load_market_source(args)
    policy, trace = _social_welfare_policy(market, args)
    save_policy(policy, args.out)
    trace_path = args.trace or f"{args.out}.trace.csv"
    trace.write_csv(trace_path, include_timing=args.timing)
    last = trace.lower_bound[-1] if len(trace) else float("nan")
    print(f"wrote {args.out} and {trace_path}: {len(trace)} iterations, lower bound {last:.6g}")
    return EXIT_OK


def _resolve_policy(name, market, args):
    if name == "naive":
        return naive_policy(market)
    if name == "reciprocal":
        return reciprocal_policy(market)
    if name == "social_welfare":
        return _social_welfare_policy(market, args)[0]
    if name in FIXTURE_POLICIES:
        return FIXTURE_POLICIES[name](market)
    policy = load_policy(name)
    policy.check_market(market)
    return policy


def _policy_label(name):
    if name in BASELINES or name in FIXTURE_POLICIES:
        return name
    return Path(name).stem


def cmd_evaluate(args) -> int:
    market = _load_market_source(args)
    names = args.policy or list(BASELINES)
    policies = {}
    for name in names:
        policies[_policy_label(name)] = _resolve_policy(name, market, args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    report = {}
    long_rows = []
    for label, policy in policies.items():
        entry = evaluate_exact(market, policy).to_dict()
        entry["sw_mc_mean"] = None
        entry["sw_mc_2stderr"] = None
        if args.mc_samples > 0:
            sim = simulate_market(market, policy, SimulationConfig(args.mc_samples, args.mc_runs, args.seed))
            entry["sw_mc_mean"] = sim.mean_matches
            entry["sw_mc_2stderr"] = 2.0 * sim.stderr
        report[label] = entry
        for metric in ("sw_exact", "sw_lower_bound", "sw_mc_mean", "sw_mc_2stderr"):
            if entry[metric] is not None:
                long_rows.append([label, metric, repr(entry[metric])])
        line = f"{label:>24s}  sw_exact={entry['sw_exact']:.6f}"
        if entry["sw_mc_mean"] is not None:
            line += f"  sw_mc={entry['sw_mc_mean']:.4f} +/- {entry['sw_mc_2stderr']:.4f}"
        print(line)

    if len(policies) >= 2:
        values = [report[k]["sw_exact"] for k in policies]
        print(f"{'gap (max - min)':>24s}  {max(values) - min(values):.6f}")

    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    with open(out_dir / "report.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy", "metric", "value"])
        writer.writerows(long_rows)

    if args.gains:
        naive = naive_policy(market)
        gains = {}
        for label, policy in policies.items():
            gains[f"switch:{label}"] = analysis.switch_gain(market, naive, policy)
            gains[f"adoption:{label}"] = analysis.adoption_gain(market, policy, naive)
            gains[f"retention:{label}"] = analysis.retention_gain(market, policy, naive)
        analysis.write_gains_csv(out_dir / "gains.csv", gains)
        with open(out_dir / "gain_histograms.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["name", "bin_lo", "bin_hi", "count"])
            for name, rep in gains.items():
                for b, count in enumerate(rep.bin_counts):
                    writer.writerow([name, repr(float(rep.bin_edges[b])), repr(float(rep.bin_edges[b + 1])), int(count)])
    if args.histograms:
        analysis.utility_histograms(market, policies).write_csv(out_dir / "histograms.csv")
    return EXIT_OK


def _sweep_cell(cell):
    """Run one sweep cell; returns CSV rows. Top level so worker processes can pickle it."""
    kind, setting, params, policy_names, opt, mc = cell
    base = [kind, setting, params["n"], params["lam"], params["structure"], params["exam"], params["seed"]]
    try:
        spec = SyntheticSpec(
            n=params["n"], lam=params["lam"], structure=params["structure"], seed=params["seed"],
            exam=ExaminationModel.from_name(params["exam"]),
        )
        market = generate_synthetic(spec)
    except Exception as exc:  # noqa: BLE001 - flagged row, sweep continues
        return [base + [name, "sw_exact", "", f"error: {exc}"] for name in policy_names]
    rows = []
    for name in policy_names:
        try:
            if name == "naive":
                policy = naive_policy(market)
            elif name == "reciprocal":
                policy = reciprocal_policy(market)
            elif name == "social_welfare":
                config = OptimizerConfig(**opt["config"])
                if opt["shortlist"]:
                    policy = two_stage_rerank(market, min(opt["shortlist"], market.num_employers), config)[0]
                else:
                    policy = optimize(market, config)[0]
            else:
                raise ValueError(f"unknown policy {name!r}")
            rows.append(base + [name, "sw_exact", repr(evaluate_exact(market, policy).sw_exact), "ok"])
            if mc["samples"] > 0:
                sim = simulate_market(market, policy, SimulationConfig(mc["samples"], mc["runs"], params["seed"]))
                rows.append(base + [name, "sw_mc_mean", repr(sim.mean_matches), "ok"])
                rows.append(base + [name, "sw_mc_2stderr", repr(2.0 * sim.stderr), "ok"])
        except Exception as exc:  # noqa: BLE001
            rows.append(base + [name, "sw_exact", "", f"error: {exc}"])
    return rows


SWEEP_HEADER = ["sweep", "setting", "n", "lambda", "structure", "exam", "seed", "policy", "metric", "value", "status"]


def sweep_cells(args):
    raw = args.values or SWEEP_DEFAULTS[args.sweep]
    settings = [s.strip() for s in raw.split(",") if s.strip()]
    policy_names = [s.strip() for s in args.policies.split(",") if s.strip()]
    if not policy_names:
        raise UsageError("at least one policy is required")
    opt = {"config": _optimizer_config(args).__dict__, "shortlist": args.shortlist}
    mc = {"samples": args.mc_samples, "runs": args.mc_runs}
    cells = []
    for setting in settings:
        params = {"n": args.n, "lam": args.lam, "structure": args.structure, "exam": args.exam, "seed": args.seed}
        try:
            if args.sweep == "lambda":
                params["lam"] = float(setting)
            elif args.sweep == "size":
                params["n"] = int(setting)
            else:
                params[args.sweep] = setting
        except ValueError as exc:
            raise UsageError(f"bad sweep value {setting!r}: {exc}") from None
        cells.append((args.sweep, setting, params, policy_names, opt, mc))
    return cells


def cmd_sweep(args) -> int:
    cells = sweep_cells(args)
    if args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            results = list(pool.map(_sweep_cell, cells))
    else:
        results = [_sweep_cell(cell) for cell in cells]
    rows = [row for cell_rows in results for row in cell_rows]
    with open(args.out, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SWEEP_HEADER)
        writer.writerows(rows)
    failed = sum(r[-1] != "ok" for r in rows)
    print(f"wrote {args.out}: {len(rows)} rows ({failed} flagged)")
    return EXIT_OK


COMMANDS = {"generate": cmd_generate, "optimize": cmd_optimize, "evaluate": cmd_evaluate, "sweep": cmd_sweep}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    if getattr(args, "fixture", None) == "theorem2":
        # --n doubles as the theorem2 size
        args.theorem2_n = args.n if args.n is not None else 10
        args.n = None
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"matchrank: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (SinkhornError, FloatingPointError, ArithmeticError) as exc:
        print(f"matchrank: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"matchrank: I/O failure: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"matchrank: error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
