"""Command-line entry point: ``datamarket <subcommand> [options]``.

Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import logging
import math
import sys
from pathlib import Path

import numpy as np

from ..core import FeatureMatrix, InputError, MarketError, PredictionTask, write_traces
from ..division import (
    CoalitionValueOracle,
    penalty_valid,
    robust_sample_size,
    shapley_robust,
)
from ..engine import run_market
from . import experiments
from .config import RunConfig, config_hash, load_config
from .scenarios import Scenario, generate_scenario

log = logging.getLogger("datamarket")

SCENARIOS = {
    "inventory": Scenario(),
    "two-type": experiments.REGRET_SCENARIO,
    "adversarial": dataclasses.replace(
        experiments.REGRET_SCENARIO, name="adversarial", mu_distribution="two-type-adversarial"
    ),
}

PENALTY_FAMILIES = {
    "exponential": lambda lam: (lambda x: math.exp(-lam * x)),
    "power2": lambda lam: (lambda x: 2.0 ** (-x)),
    "reciprocal": lambda lam: (lambda x: 1.0 / (1.0 + x)),
}


def _header(out, command: str, config: RunConfig, **extra):
    print(f"# datamarket {command} config={config_hash(config, command=command, **extra)} "
          f"seed={config.seed}", file=out)


def _write_csv(path: Path, header, rows):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _fmt(x: float) -> str:
    return repr(float(x))


# ---------------------------------------------------------------- subcommands


def cmd_simulate(args, config: RunConfig, out) -> int:
    base = SCENARIOS[args.scenario] if args.config is None else config.scenario
    changes = {"master_seed": config.seed}
    if args.n is not None:
        changes["n_buyers"] = args.n
    scenario = dataclasses.replace(base, **changes)
    market = config.market_for(b_max=scenario.b_max)
    if args.no_divide:
        market = dataclasses.replace(market, divide=False)
    _header(out, "simulate", dataclasses.replace(config, scenario=scenario, market=market))

    X, buyers = generate_scenario(scenario)
    run = run_market(market, X, buyers)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    write_traces(outdir / "traces.jsonl", run.traces)
    cumulative = run.cumulative_regret()
    _write_csv(
        outdir / "summary.csv",
        ["n", "price", "bid", "revenue", "cumulative_regret"],
        [[t.n, _fmt(t.price), _fmt(t.bid), _fmt(t.revenue), _fmt(c)]
         for t, c in zip(run.traces, cumulative)],
    )
    _write_csv(
        outdir / "sellers.csv",
        ["seller", "cumulative_revenue"],
        [[sid, _fmt(r)] for sid, r in zip(X.seller_ids, run.seller_revenue)],
    )
    _write_csv(
        outdir / "seller_steps.csv",
        ["n", *X.seller_ids],
        [[t.n, *map(_fmt, row)] for t, row in zip(run.traces, run.seller_steps)],
    )
    failed = sum(t.error is not None for t in run.traces)
    summary = run.regret()
    print(f"buyers={len(run.traces)} failed={failed} revenue={summary.realized_revenue:.6f} "
          f"best_fixed={summary.best_fixed_revenue:.6f} avg_regret={summary.average:.6f}", file=out)
    print(f"wrote {outdir / 'traces.jsonl'}", file=out)
    return 0


def _read_features(path: Path) -> FeatureMatrix:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = [r for r in csv.reader(fh) if r]
    if not rows:
        raise InputError(f"{path} is empty")
    try:
        ids = tuple(r[0] for r in rows)
        values = np.array([[float(v) for v in r[1:]] for r in rows])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric feature value ({exc})") from exc
    return FeatureMatrix(values, ids)


def _read_target(path: Path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        cells = [r[0] for r in csv.reader(fh) if r]
    try:
        return np.array([float(c) for c in cells])
    except ValueError as exc:
        raise InputError(f"{path}: non-numeric target value ({exc})") from exc


def cmd_shapley(args, config: RunConfig, out) -> int:
    X = _read_features(Path(args.features))
    y = _read_target(Path(args.target))
    if len(y) != X.n_steps:
        raise InputError(f"target has {len(y)} values but features have {X.n_steps} columns")
    market = config.market
    if args.lam is not None:
        market = dataclasses.replace(market, lam=args.lam)
    K = None if args.exact else (
        args.K if args.K is not None else robust_sample_size(X.n_sellers, args.epsilon, args.delta)
    )
    _header(out, "shapley", config, K=K, lam=market.lam, features=str(args.features))
    oracle = CoalitionValueOracle.from_data(
        X, PredictionTask.split(y), market.predictor, market.gain
    )
    div = shapley_robust(oracle, X, K, market.similarity, market.lam, config.seed)
    shares = div.normalized()
    print(f"{'seller':<16} {'psi':>12} {'penalty':>12} {'robust_psi':>12} {'share':>10}", file=out)
    for sid, base, pen, psi, share in zip(X.seller_ids, div.base, div.penalty, div.psi, shares):
        print(f"{sid:<16} {base:12.6f} {pen:12.6f} {psi:12.6f} {share:10.4f}", file=out)
    print(f"K={'exact' if K is None else K} lambda={market.lam:.6g}", file=out)
    return 0


def cmd_regret(args, config: RunConfig, out) -> int:
    sizes = [int(s) for s in args.sizes.split(",")]
    seeds = range(config.seed, config.seed + args.seeds)
    scenario = config.scenario if args.config else experiments.REGRET_SCENARIO
    market = config.market if args.config else experiments.REGRET_MARKET
    _header(out, "regret", dataclasses.replace(config, scenario=scenario, market=market),
            sizes=sizes, seeds=args.seeds)
    rows = experiments.regret_decay(sizes, seeds, scenario, market)
    _write_csv(
        Path(args.out),
        ["N", "seed", "realized_revenue", "best_fixed_revenue", "avg_regret"],
        [[r.N, r.seed, _fmt(r.realized_revenue), _fmt(r.best_fixed_revenue), _fmt(r.avg_regret)]
         for r in rows],
    )
    means = experiments.mean_regret_by_size(rows)
    for N, value in means.items():
        print(f"N={N} mean_avg_regret={value:.6f}", file=out)
    if len(means) >= 2:
        first, last = means[min(means)], means[max(means)]
        print(f"ratio={last / first:.4f}", file=out)
    return 0


def cmd_penalty_check(args, config: RunConfig, out) -> int:
    lam = math.log(2) if args.lam is None else args.lam
    f = PENALTY_FAMILIES[args.family](lam)
    _header(out, "penalty-check", config, family=args.family, lam=lam, c_max=args.c_max)
    result = penalty_valid(f, args.c_max, np.arange(0, args.x_max + 1))
    label = f"exponential(lambda={lam:.6g})" if args.family == "exponential" else args.family
    print(f"family={label} valid={result.valid}", file=out)
    if result.violation is not None:
        x, c = result.violation
        print(f"violation at x={x:g} c={c}", file=out)
    if result.tight:
        print("equality at " + " ".join(f"(x={x:g},c={c})" for x, c in result.tight), file=out)
    return 0


def cmd_axioms(args, config: RunConfig, out) -> int:
    _header(out, "axioms", config, instances=args.instances)
    tallies = experiments.axiom_battery(args.instances, seed=config.seed)
    ok = True
    for mode, by_axiom in tallies.items():
        for axiom, t in by_axiom.items():
            ok &= t.all_passed
            status = "PASS" if t.all_passed else "FAIL"
            print(f"{status} {mode:<8} {axiom:<13} {t.passed}/{t.total}", file=out)
    return 0 if ok else 1


def cmd_repro(args, config: RunConfig, out) -> int:
    _header(out, "repro", config)
    ok = True
    for line in experiments.repro_examples():
        ok &= line.ok
        print(f"{'PASS' if line.ok else 'FAIL'} {line.label}: expected {line.expected:.10f} "
              f"computed {line.computed:.10f}", file=out)
    for label, value in experiments.impossibility_lines():
        print(f"     {label}: {value}", file=out)
    return 0 if ok else 1


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="datamarket", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="INI config file")
        p.set_defaults(func=func)
        return p

    p = add("simulate", cmd_simulate, "run the market over a synthetic scenario")
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="inventory")
    p.add_argument("--n", type=int, help="number of buyers")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--no-divide", action="store_true", help="skip revenue division")

    p = add("shapley", cmd_shapley, "divide value among sellers of a dataset")
    p.add_argument("--features", required=True, help="CSV: seller id, then one value per step")
    p.add_argument("--target", required=True, help="single-column CSV of labels")
    p.add_argument("--exact", action="store_true", help="exact Shapley values")
    p.add_argument("--K", type=int, help="number of sampled permutations")
    p.add_argument("--epsilon", type=float, default=0.1)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--lam", type=float, help="penalty rate (default ln 2)")

    p = add("regret", cmd_regret, "average regret as the number of buyers grows")
    p.add_argument("--sizes", default="500,2000")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--out", default="regret.csv")

    p = add("penalty-check", cmd_penalty_check, "check a penalty family against copying")
    p.add_argument("--family", choices=sorted(PENALTY_FAMILIES), required=True)
    p.add_argument("--lam", type=float, help="rate for the exponential family")
    p.add_argument("--c-max", type=int, default=5)
    p.add_argument("--x-max", type=int, default=10)

    p = add("axioms", cmd_axioms, "test the division axioms on random games")
    p.add_argument("--instances", type=int, default=50)

    add("repro", cmd_repro, "recompute the worked examples")
    return parser


def main(argv=None, out=None) -> int:
    out = sys.stdout if out is None else out
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = load_config(args.config)
    except InputError as exc:
        print(f"datamarket: {exc}", file=sys.stderr)
        return 2
    try:
        return args.func(args, config, out)
    except (MarketError, OSError, np.linalg.LinAlgError) as exc:
        print(f"datamarket: {exc}", file=sys.stderr)
        return 1
