from __future__ import annotations

import argparse

from hetnet.commands._common import add_common_arguments, build_spec
from hetnet.services.dependencies import get_experiment_service
from hetnet.services.experiment_service import METHOD_SECTIONS


def register(subparsers: argparse._SubParsersAction) -> None:
    parser = subparsers.add_parser("bench", help="wall-clock timing per method")
    add_common_arguments(parser)
    parser.set_defaults(func=run)


def run(args: argparse.Namespace) -> int:
    spec = build_spec(args, allowed=METHOD_SECTIONS, default=("max-sinr", "dcd", "subgradient"))
    report = get_experiment_service(spec.outputs).bench(spec)
    for method, seconds in report.mean_seconds.items():
        print(f"{method:<20} {seconds:>10.4f} s")
    return 2 if any(entry.error for entry in report.entries) else 0
