"""Command-line entry points: run / sweep / compare / report / scenario."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import harness


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--network", default="case33", choices=harness.NETWORKS)
    p.add_argument("--days", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--impedance-factor", type=float, default=None,
                   help="reference-model impedance multiplier (default 1.5, 1.3 for case118)")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--config", default=None,
                   help="JSON file overriding agent hyperparameters")
    p.add_argument("--cache-refactions", default=None,
                   help="directory caching dispatch tables across experiments")
    p.add_argument("--force", action="store_true", help="recompute even if cached")


def _base_config(args, mode: str, lam: float | None) -> harness.ExperimentConfig:
    hyper = {}
    if args.config:
        hyper = json.loads(Path(args.config).read_text())
    factor = args.impedance_factor
    if factor is None:
        factor = 1.3 if args.network == "case118" else 1.5
    out = args.out or f"runs/{args.network}_{mode}" + (f"_l{lam:g}" if lam is not None else "")
    return harness.ExperimentConfig(
        network=args.network, mode=mode, lambda_scale=lam,
        impedance_factor=factor, days=args.days, seed=args.seed,
        hyper=hyper, out_dir=out, cache_refactions=args.cache_refactions)


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    parser = argparse.ArgumentParser(prog="vvclab",
                                     description="Volt-Var control experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment")
    p_run.add_argument("--mode", default="rm_sac", choices=harness.MODES)
    p_run.add_argument("--lambda", dest="lambda_scale", type=float, default=None,
                       help="residual scale for rm_sac (default: per-network best)")
    p_run.add_argument("--seeds", default=None,
                       help="comma-separated seeds for replication (overrides --seed)")
    _add_common(p_run)

    p_sweep = sub.add_parser("sweep", help="rm_sac run per residual scale")
    p_sweep.add_argument("--lambdas", default="0,0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9,1.0",
                         help="comma-separated residual scales")
    _add_common(p_sweep)

    p_cmp = sub.add_parser("compare", help="per-day error of a method vs a baseline run")
    p_cmp.add_argument("--method", required=True, help="method metrics.csv")
    p_cmp.add_argument("--baseline", required=True, help="baseline metrics.csv")
    p_cmp.add_argument("--out", default="errors.csv")

    p_rep = sub.add_parser("report", help="early-stage (exploration) reward table")
    p_rep.add_argument("--metrics", nargs="+", required=True,
                       help="metrics.csv files, one per lambda")
    p_rep.add_argument("--lambdas", required=True, help="comma-separated, same order")
    p_rep.add_argument("--out", default="early_stage.csv")

    p_scn = sub.add_parser("scenario", help="regenerate a scenario CSV from its seed")
    p_scn.add_argument("--network", default="case33", choices=harness.NETWORKS)
    p_scn.add_argument("--days", type=int, default=100)
    p_scn.add_argument("--seed", type=int, default=0)
    p_scn.add_argument("--out", default="scenario.csv")

    args = parser.parse_args(argv)

    if args.command == "run":
        lam = args.lambda_scale
        if args.mode == "rm_sac" and lam is None:
            lam = harness.BEST_LAMBDA[args.network]
        if args.mode != "rm_sac" and lam is not None:
            parser.error("--lambda applies to rm_sac only")
        cfg = _base_config(args, args.mode, lam)
        if args.seeds is not None:
            for seed in (int(x) for x in args.seeds.split(",")):
                rep = replace(cfg, seed=seed,
                              out_dir=str(Path(cfg.out_dir) / f"seed_{seed}"))
                print(harness.run_experiment(rep, force=args.force))
        else:
            print(harness.run_experiment(cfg, force=args.force))

    elif args.command == "sweep":
        lambdas = [float(x) for x in args.lambdas.split(",")]
        base = _base_config(args, "rm_sac", lambdas[0])
        base = replace(base, out_dir=args.out or f"runs/{args.network}_sweep")
        rows, path = harness.lambda_sweep(base, lambdas, force=args.force)
        for r in rows:
            print(f"lambda={r['lambda']:g} test_reward={r['test_reward']:.4f} "
                  f"critic_loss={r['critic_loss']:.3e}")
        print(path)

    elif args.command == "compare":
        err = harness.error_vs_baseline(harness.read_metrics(args.method),
                                        harness.read_metrics(args.baseline))
        harness.write_error_report(args.out, err)
        print(f"final-{harness.FINAL_WINDOW}-day mean errors: "
              f"reward={err['final']['reward_error']:.4f} "
              f"ploss={err['final']['ploss_error']:.4f} "
              f"violation={err['final']['violation_error']:.4f}")
        print(args.out)

    elif args.command == "report":
        lambdas = [float(x) for x in args.lambdas.split(",")]
        if len(lambdas) != len(args.metrics):
            parser.error("--metrics and --lambdas must have equal length")
        by_lambda = {lam: harness.read_metrics(path)
                     for lam, path in zip(lambdas, args.metrics)}
        rows = harness.early_stage_report(by_lambda)
        harness.write_early_report(args.out, rows)
        for r in rows:
            print(f"lambda={r['lambda']:g} days0-9 test_reward={r['early_test_reward']:.4f}")
        print(args.out)

    elif args.command == "scenario":
        path = harness.regenerate_scenario(args.network, args.days, args.seed, args.out)
        print(path)

    return 0


if __name__ == "__main__":
    sys.exit(main())
