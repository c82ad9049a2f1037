from __future__ import annotations

import argparse

from hetnet.commands._common import add_common_arguments, build_spec, run_and_report

JOINT_METHODS = ("joint-dcd", "joint-maxsinr", "direct-dual", "maxsinr-optpower")


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("joint", help="joint association and power control")
    add_common_arguments(parser)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    spec = build_spec(args, allowed=JOINT_METHODS, default=("joint-dcd", "joint-maxsinr"))
    return run_and_report(spec)
