#!/usr/bin/env python3
"""
Doubly mean-reflected MFBSDE solver
Command-line entry point: run, sweep and audit configured scenarios
"""

import argparse
import json
import logging
import os
import sys
from typing import List, Optional

# Add the project root to Python path
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

from core.config import load_config
from core.error_handler import ErrorHandler, handle_errors
from core.runner import SWEEP_AXES, audit, parse_sweep_values, run, sweep

logger = logging.getLogger(__name__)
error_handler = ErrorHandler()


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Doubly mean-reflected mean-field BSDE solver")
    parser.add_argument("--verbose", action="store_true", help="log per-step detail")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="solve one scenario and export its artifacts")
    run_parser.add_argument("--scenario", required=True, help="configuration file or catalog scenario name")
    run_parser.add_argument("--out", required=True, help="output directory")
    run_parser.add_argument("--seed", type=int)
    run_parser.add_argument("--particles", type=int, dest="N")
    run_parser.add_argument("--steps", type=int, dest="n_steps")
    run_parser.add_argument("--picard-tol", type=float, dest="picard_tol")

    sweep_parser = commands.add_parser("sweep", help="convergence table over one configuration axis")
    sweep_parser.add_argument("--scenario", required=True)
    sweep_parser.add_argument("--axis", required=True, choices=SWEEP_AXES)
    sweep_parser.add_argument("--values", required=True, help="comma-separated, strictly increasing")
    sweep_parser.add_argument("--out", required=True)

    audit_parser = commands.add_parser("audit", help="re-derive residuals from an exported run")
    audit_parser.add_argument("--in", required=True, dest="in_dir")
    audit_parser.add_argument("--scenario", required=True)
    return parser


@handle_errors(error_handler)
def run_command(args: argparse.Namespace) -> int:
    config = load_config(args.scenario).with_overrides(
        seed=args.seed, N=args.N, n_steps=args.n_steps, picard_tol=args.picard_tol)
    report = run(config, out_dir=args.out)
    print(json.dumps({"audit": report.audit, "closed_form": report.closed_form,
                      "iterations": len(report.picard_history)}, indent=2))
    return 0 if report.hard_invariants_hold else 1


@handle_errors(error_handler)
def sweep_command(args: argparse.Namespace) -> int:
    config = load_config(args.scenario)
    result = sweep(config, args.axis, parse_sweep_values(args.values), out_dir=args.out)
    print(json.dumps(result.rows, indent=2, default=float))
    return 0


@handle_errors(error_handler)
def audit_command(args: argparse.Namespace) -> int:
    config = load_config(args.scenario)
    report = audit(args.in_dir, config)
    print(json.dumps(report.summary(), indent=2))
    return 0 if report.hard_invariants_hold else 1


COMMANDS = {"run": run_command, "sweep": sweep_command, "audit": audit_command}


def main(argv: Optional[List[str]] = None) -> int:
    """Main entry point for the application"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format='%(asctime)s - %(levelname)s - %(message)s')
    return COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
