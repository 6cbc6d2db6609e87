"""Command-line interface for the measurement pipeline.

Subcommands mirror the pipeline stages; ``all`` chains them.  Exit
codes: 0 success, 1 any processing failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

from .config import PipelineConfig, load_config
from .errors import ConfigError, HygroflowError, MissingArtifactError
from .pipeline import (run_all, run_flow, run_preprocess, run_report,
                       run_strain, run_synth)
from .synth import case_names

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="PATH",
                        help="YAML configuration file (defaults apply without it)")
    parser.add_argument("--out", metavar="DIR", help="output directory override")
    parser.add_argument("--pairs", metavar="SELECTOR",
                        help="pair selector: 'initial' or 'REF:OTHER[,...]'")
    parser.add_argument("--workers", type=int, metavar="N",
                        help="concurrent pair workers")
    parser.add_argument("--no-illum", action="store_true",
                        help="disable illumination compensation (sets its scale to 0)")
    parser.add_argument("--rerun-registration", action="store_true",
                        help="second flow pass after rigid registration")
    parser.add_argument("--seed", type=int, metavar="N",
                        help="seed for synthetic data generation")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hygroflow",
        description="Humidity-deformation measurement from specimen scans")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in [
        ("preprocess", "segment, align and crop the configured scans"),
        ("flow", "estimate deformation fields for aligned pairs"),
        ("strain", "derive strain fields, coefficient profiles and plots"),
        ("report", "write per-face summary reports"),
        ("synth", "generate synthetic ground-truth cases"),
        ("all", "run preprocess, flow, strain and report"),
    ]:
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        if name == "synth":
            p.add_argument("--case", metavar="NAME",
                           help="single catalog case (default: whole catalog)")
            p.add_argument("--size", type=int, metavar="PX",
                           help="override the case's image size")
            p.add_argument("--list", action="store_true", dest="list_cases",
                           help="list catalog case names and exit")
    return parser


def _configure(args) -> PipelineConfig:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.out:
        cfg.output_dir = args.out
    if args.pairs:
        cfg.pairs = args.pairs
    if args.workers:
        cfg.workers = args.workers
    if args.seed is not None:
        cfg.seed = args.seed
    if args.no_illum:
        cfg.solver = replace(cfg.solver, illum_scale=0.0)
    if args.rerun_registration:
        cfg.rerun_registration = True
    cfg.validate()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "synth" and getattr(args, "list_cases", False):
        for name in case_names():
            print(name)
        return EXIT_OK
    try:
        cfg = _configure(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.command == "preprocess":
            errors = run_preprocess(cfg)
        elif args.command == "flow":
            errors = run_flow(cfg, args.pairs)
        elif args.command == "strain":
            errors = run_strain(cfg, args.pairs)
        elif args.command == "report":
            errors = run_report(cfg)
        elif args.command == "synth":
            errors = run_synth(cfg, case=args.case, size=args.size)
        else:
            errors = run_all(cfg, args.pairs)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    except HygroflowError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE

    for line in errors:
        print(f"error: {line}", file=sys.stderr)
    return EXIT_FAILURE if errors else EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
