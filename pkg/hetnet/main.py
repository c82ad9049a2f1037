from __future__ import annotations

import argparse
import logging
import sys
from typing import Optional, Sequence

from pydantic import ValidationError

from hetnet import __version__
from hetnet.commands import association, bench, joint, mimo, network
from hetnet.services.config_service import ConfigServiceError
from hetnet.services.oracle_service import OracleSizeError

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_FAILED = 2


def _ensure_logging(level: int = logging.INFO) -> None:
    formatter = logging.Formatter("%(levelname)s: %(message)s")
    root = logging.getLogger()
    if not root.handlers:
        logging.basicConfig(level=level, format="%(levelname)s: %(message)s")
    else:
        root.setLevel(level)
        for handler in root.handlers:
            handler.setFormatter(formatter)


class HetnetArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with EXIT_INVALID."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = HetnetArgumentParser(
        prog="hetnet",
        description="User association, power control and beamforming experiments for HetNets.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in (network, association, joint, mimo, bench):
        command.register(subparsers)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Entry point; returns 0 on success, 1 on invalid input, 2 on runtime failure."""

    args = build_parser().parse_args(argv)
    _ensure_logging(logging.DEBUG if args.verbose else logging.INFO)
    try:
        return args.func(args)
    except (ValueError, ValidationError, ConfigServiceError, OracleSizeError) as exc:
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except RuntimeError as exc:
        logging.getLogger(__name__).debug("Command failed", exc_info=True)
        print(f"ERROR: {exc}", file=sys.stderr)
        return EXIT_FAILED


if __name__ == "__main__":
    raise SystemExit(main())
