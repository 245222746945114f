"""Command line entry point: ``krflab run | diff | list-checks``."""
from __future__ import annotations

import argparse
import logging
import sys

from ..flow import StabilityViolation
from .config import APPLICABLE, CHECKS, ConfigError, parse_config
from .report import ReportMismatch, load_summary, report_diff
from .runner import EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_OK, run_scenario


def _cmd_run(args):
    try:
        cfg = parse_config(args.config)
        summary, code = run_scenario(cfg)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except StabilityViolation as exc:
        print(f"parameter error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for name, res in summary["checks"].items():
        print(f"{'PASS' if res['passed'] else 'FAIL'}  {name}: {res['detail']}")
    if summary["singularity"]:
        s = summary["singularity"]
        print(f"singularity: {s['classification']} (exponent {s['growth_exponent']:.4g})")
    if summary["terminal"]:
        print(f"flow terminated: {summary['terminal']}")
    print(f"summary written to {cfg.output_dir}/{cfg.id}/summary.json")
    return code


def _cmd_diff(args):
    try:
        entries = report_diff(load_summary(args.a), load_summary(args.b), rel_tol=args.rel_tol)
    except (OSError, ValueError, ReportMismatch) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    for line in entries:
        print(line)
    return EXIT_CHECK_FAILED if entries else EXIT_OK


def _cmd_list(_args):
    for name, text in CHECKS.items():
        kinds = ", ".join(k for k, names in APPLICABLE.items() if name in names)
        print(f"{name:<18} [{kinds}]  {text}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="krflab", description="Normalised Kähler-Ricci flow experiments on flat tori.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="run a scenario file")
    p.add_argument("config", help="TOML scenario file")
    p.set_defaults(func=_cmd_run)
    p = sub.add_parser("diff", help="compare two summary.json files")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--rel-tol", type=float, default=0.1, help="relative tolerance (default 0.1)")
    p.set_defaults(func=_cmd_diff)
    p = sub.add_parser("list-checks", help="list available checks")
    p.set_defaults(func=_cmd_list)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
