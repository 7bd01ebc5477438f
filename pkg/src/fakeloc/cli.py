"""Command line interface.

Each subcommand maps onto one pipeline stage and chains its prerequisites
automatically, so `fakeloc retrain-eval --config cfg.json` performs the whole
run. Stages already stamped in the output directory are skipped. A file lock
in the output directory keeps concurrent invocations from clobbering each
other.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from filelock import FileLock

from . import pipeline
from .pipeline import OUTPUT_DIR_ENV, STRATEGIES, RunConfig, Workspace


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fakeloc",
        description="Frame-level localization of manipulated audio regions: "
        "synthetic corpora, diverse-expert training, informative-sample "
        "mining, segment-swap pseudo-labeling, retraining and evaluation.",
    )
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", help="path to a JSON run configuration")
        p.add_argument("--seed", type=int, help="master seed override")
        p.add_argument("--out", help=f"output directory (default: ${OUTPUT_DIR_ENV} "
                                     "or the config's output_dir)")
        p.add_argument("--n-source", type=int, help="source corpus size override")
        p.add_argument("--n-target", type=int, help="target corpus size override")
        p.add_argument("--n-experts", type=int, help="ensemble size override")
        p.add_argument("--u", type=float, help="diversity hinge margin override")
        p.add_argument("--epochs", type=int, help="training epochs override")
        p.add_argument("--strategy", choices=STRATEGIES, help="mining strategy override")
        p.add_argument("--z", type=int, help="number of clips to mine (overrides z-fraction)")
        p.add_argument("--z-fraction", type=float,
                       help="fraction of the candidate pool to mine")

    add_common(sub.add_parser("synth", help="generate the two-domain synthetic corpus"))
    add_common(sub.add_parser("train-experts", help="train the diverse expert ensemble"))
    add_common(sub.add_parser("mine", help="score and select informative target clips"))
    add_common(sub.add_parser("pseudo-label",
                              help="segment-swap the mined clips and emit the augmented manifest"))
    add_common(sub.add_parser("retrain-eval",
                              help="retrain a detector on source + pseudo data and evaluate"))
    p_sweep = sub.add_parser("sweep", help="grid over u or z with repeated runs")
    add_common(p_sweep)
    p_sweep.add_argument("--param", default="u", choices=["u", "z"])
    p_sweep.add_argument("--values", default="0.25,0.5,0.75",
                         help="comma-separated grid values")
    p_sweep.add_argument("--repeats", type=int, default=3)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    obj = {}
    if args.config:
        obj = json.loads(open(args.config, encoding="utf-8").read())
    cfg = RunConfig.from_dict(obj)
    out = args.out or os.environ.get(OUTPUT_DIR_ENV)
    overrides = {
        "output_dir": out,
        "seed": args.seed,
        "n_source": args.n_source,
        "n_target": args.n_target,
        "n_experts": args.n_experts,
        "u": args.u,
        "epochs": args.epochs,
        "strategy": args.strategy,
        "z": args.z,
        "z_fraction": args.z_fraction,
    }
    changed = {k: v for k, v in overrides.items() if v is not None}
    if changed:
        import dataclasses

        cfg = dataclasses.replace(cfg, **changed)
    return cfg


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=getattr(logging, args.log_level),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2

    ws = Workspace(cfg.output_dir)
    with FileLock(str(ws.lock_path())):
        try:
            if args.command == "synth":
                src, tgt = pipeline.run_synth(cfg)
                print(src)
                print(tgt)
            elif args.command == "train-experts":
                print(pipeline.run_train_experts(cfg))
            elif args.command == "mine":
                print(pipeline.run_mine(cfg))
            elif args.command == "pseudo-label":
                print(pipeline.run_pseudo_label(cfg))
            elif args.command == "retrain-eval":
                metrics = pipeline.run_retrain_eval(cfg)
                print(json.dumps(metrics, sort_keys=True, indent=1))
            elif args.command == "sweep":
                values = [float(v) for v in args.values.split(",") if v.strip()]
                print(pipeline.run_sweep(cfg, param=args.param, values=values,
                                         repeats=args.repeats))
        except (ValueError, RuntimeError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
