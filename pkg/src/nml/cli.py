"""Command line entry point: ``nml <stage|run|gen-synthetic> --config <path> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from .config import ConfigError, dump_config, load_config, PipelineConfig, DataPaths
from .pipeline import STAGES, DependencyError, StageError, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_DEPENDENCY, EXIT_STAGE = 0, 2, 3, 4


def _error(kind: str, message: str, code: int, **extra) -> int:
    doc = {"error": kind, "message": message, "exit_code": code, **extra}
    print(json.dumps(doc, sort_keys=True), file=sys.stderr)
    return code


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="nml", description="Policy-stance index, causality and forecasting pipeline")
    sub = p.add_subparsers(dest="command", required=True)
    for name in (*STAGES, "run"):
        sp = sub.add_parser(name, help="run all stages" if name == "run" else f"run the {name} stage")
        sp.add_argument("--config", required=True)
        sp.add_argument("--out")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--stages", help="comma-separated stage list (with run)")
        sp.add_argument("--force", action="store_true", help="rerun even when inputs are unchanged")
    g = sub.add_parser("gen-synthetic", help="write a synthetic corpus and a matching config")
    g.add_argument("--out", required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--weeks", type=int, default=546)
    g.add_argument("--message-rate", type=float, default=40.0)
    return p


def main(argv=None) -> int:
    logging.basicConfig(level=os.environ.get("NML_LOG_LEVEL", "WARNING").upper(),
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    if args.command == "gen-synthetic":
        from .synthetic import gen_synthetic
        truth = gen_synthetic(args.out, seed=args.seed, weeks=args.weeks, message_rate=args.message_rate)
        cfg = PipelineConfig(data=DataPaths("messages.jsonl", "macro_daily.csv", "fomc_dates.csv"), seed=args.seed)
        dump_config(cfg, Path(args.out) / "config.yaml")
        print(json.dumps({"out": str(args.out), "weeks": truth.weeks, "seed": truth.seed}))
        return EXIT_OK
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    if args.command == "run":
        stages = [s.strip() for s in args.stages.split(",")] if args.stages else list(STAGES)
    else:
        stages = [args.command]
    try:
        outcomes = run_pipeline(cfg, stages, seed=args.seed, out=args.out, force=args.force)
    except ValueError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    except DependencyError as exc:
        return _error("dependency", str(exc), EXIT_DEPENDENCY, stage=exc.stage, missing=exc.missing)
    except StageError as exc:
        return _error("stage", str(exc), EXIT_STAGE, stage=exc.stage)
    print(json.dumps({"stages": [{"stage": o.stage, "skipped": o.skipped, "artifacts": len(o.artifacts)}
                                 for o in outcomes]}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
