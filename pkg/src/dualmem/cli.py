"""Command line entry point: ``train``, ``compare`` and ``bench``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import _kernels
from .harness import (
    PRESETS,
    ExperimentConfig,
    bench_memory_ops,
    compare,
    load_config,
    preset,
    run_experiment,
    write_bench_csv,
)

# flag name -> ExperimentConfig field
_TRAIN_FLAGS = {
    "env": str,
    "mode": str,
    "main_capacity": int,
    "cache_capacity": int,
    "t": int,
    "n": int,
    "steps": int,
    "seed": int,
    "eval_interval": int,
    "eval_episodes": int,
    "batch_size": int,
    "learning_rate": float,
    "hidden": str,
}


def _float_list(text):
    return [int(float(v)) for v in text.split(",") if v.strip()]


def _add_run_flags(p):
    p.add_argument("--config", help="key=value config file; flags override its values")
    p.add_argument("--env", choices=sorted(PRESETS))
    p.add_argument("--mode", choices=["per", "psmm", "dms"])
    p.add_argument("--main-capacity", type=int)
    p.add_argument("--cache-capacity", type=int)
    p.add_argument("--t", type=int, help="time-ordered subsets sampled per refresh")
    p.add_argument("--n", type=int, help="environment steps per training step")
    p.add_argument("--steps", type=int, help="total environment steps")
    p.add_argument("--eval-interval", type=int)
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--learning-rate", type=float)
    p.add_argument("--hidden", help="comma-separated hidden layer widths")


def build_parser():
    parser = argparse.ArgumentParser(prog="dualmem", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one agent and write its metrics CSV")
    _add_run_flags(p)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="metrics CSV path")
    p.add_argument("--save-params", help="write the trained network snapshot here")

    p = sub.add_parser("compare", help="run per/psmm/dms over several seeds")
    _add_run_flags(p)
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--modes", default="per,psmm,dms")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("bench", help="time memory-management cycles against capacity")
    p.add_argument("--capacities", type=_float_list, default=[10_000, 100_000])
    p.add_argument("--mode", choices=["per", "psmm", "dms"], default="dms")
    p.add_argument("--cache-capacity", type=int, default=2000)
    p.add_argument("--t", type=int, default=16)
    p.add_argument("--n", type=int, default=4)
    p.add_argument("--trials", type=int, default=200)
    p.add_argument("--out", help="CSV path (stdout if omitted)")
    return parser


def config_from_args(args) -> ExperimentConfig:
    overrides = {}
    for flag in _TRAIN_FLAGS:
        value = getattr(args, flag, None)
        if value is not None:
            overrides["total_steps" if flag == "steps" else flag] = value
    if getattr(args, "out", None) and args.command == "train":
        overrides["out"] = args.out
    if args.config:
        return load_config(args.config, **overrides)
    env = overrides.pop("env", "gridworld")
    mode = overrides.pop("mode", "dms")
    return preset(env, mode, **overrides)


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(message)s",
    )
    try:
        if args.command == "train":
            cfg = config_from_args(args)
            result = run_experiment(cfg)
            if args.save_params:
                result.agent.online.save(args.save_params)
            if not cfg.out:
                from .harness import CSV_HEADER, _fmt

                print(",".join(CSV_HEADER))
                for row in result.rows:
                    print(",".join(_fmt(k, row[k]) for k in CSV_HEADER))
            print(json.dumps(result.summary), file=sys.stderr)
        elif args.command == "compare":
            cfg = config_from_args(args)
            seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
            modes = [m.strip() for m in args.modes.split(",") if m.strip()]
            finals = compare(cfg, seeds, args.out, modes=modes, workers=args.workers)
            print(json.dumps(finals), file=sys.stderr)
        elif args.command == "bench":
            rows = bench_memory_ops(
                args.capacities, args.mode, t=args.t, n=args.n, trials=args.trials, cache_capacity=args.cache_capacity
            )
            if args.out:
                write_bench_csv(rows, args.out)
            else:
                from .harness import BENCH_HEADER

                print(",".join(BENCH_HEADER))
                for r in rows:
                    print(f"{r['mode']},{r['main_capacity']},{r['cache_capacity']},{r['op_cycle_mean_us']:.3f},{r['op_cycle_p95_us']:.3f}")
            print(f"backend={_kernels.BACKEND}", file=sys.stderr)
    except ValueError as exc:
        parser.exit(2, f"dualmem: error: {exc}\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
