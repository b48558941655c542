"""Command-line entry point.

Subcommands: generate, evaluate-ambiguity, bench-supervisors, report,
attack, corrupt.  Exit codes: 0 success, 1 validation error, 2 runtime
failure (partial outputs are left in place).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from .errors import ConfigError, FormatError
from . import bench

log = logging.getLogger("ambigen")


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ambigen",
        description="Generate ambiguous test images and benchmark DNN supervisors.")
    parser.add_argument("--config", required=True, help="path to a JSON config file")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--out", default=None, help="override the config output directory")
    parser.add_argument("--jobs", type=int, default=None, help="worker pool size")
    parser.add_argument("--quiet", action="store_true", help="suppress progress logging")

    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", help="train rAAEs and write ambiguous datasets")
    sub.add_parser("evaluate-ambiguity", help="Top-1/Top-2/Top-Pair/entropy table")
    sub.add_parser("bench-supervisors", help="AUC-ROC of every supervisor per test family")
    rep = sub.add_parser("report", help="re-render reports from stored score files")
    rep.add_argument("--scores", default=None, help="score directory (default: <out>/scores)")
    rep.add_argument("--force", action="store_true", help="allow mixed config digests")
    rep.add_argument("--svg", action="store_true", help="emit latent-space SVG diagnostics")
    atk = sub.add_parser("attack", help="write FGSM/PGD attacked test sets")
    atk.add_argument("--model", default=None, help="classifier checkpoint to attack")
    sub.add_parser("corrupt", help="write corrupted test sets")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)

    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["output_dir"] = args.out
    if args.jobs is not None:
        overrides["jobs"] = args.jobs

    try:
        config = bench.load_config(args.config, overrides)
    except (ConfigError, FormatError, OSError, json.JSONDecodeError) as err:
        log.error("invalid configuration: %s", err)
        return 1

    try:
        if args.command == "generate":
            summary = bench.cmd_generate(config)
            log.info("generated %s", {k: v["rows"] for k, v in summary["produced"].items()})
        elif args.command == "evaluate-ambiguity":
            bench.cmd_evaluate_ambiguity(config)
            log.info("ambiguity table written to %s/report", config.output_dir)
        elif args.command == "bench-supervisors":
            bench.cmd_bench_supervisors(config)
            log.info("supervisor report written to %s/report", config.output_dir)
        elif args.command == "report":
            bench.cmd_report(config, score_dir=args.scores, force=args.force, svg=args.svg)
        elif args.command == "attack":
            summary = bench.cmd_attack(config, model_path=args.model)
            log.info("attack success rates: %s",
                     {k: round(v["success_rate"], 3) for k, v in summary["attacks"].items()})
        elif args.command == "corrupt":
            bench.cmd_corrupt(config)
    except (ConfigError, FormatError) as err:
        log.error("validation error: %s", err)
        return 1
    except Exception as err:  # noqa: BLE001 - runtime failures map to exit code 2
        log.error("runtime failure: %s", err)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
