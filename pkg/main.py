"""Command-line entry point for the inpainting-guidance experiments."""

import argparse
import logging
import sys
from typing import List, Optional

from cli.commands import cmd_ablation, cmd_bias_scan, cmd_nfe_sweep, cmd_run, cmd_validate
from cli.config import settings
from src import __version__
from src.errors import ConfigError

COMMANDS = {
    "run": (cmd_run, "run samplers and score them against the exact posterior"),
    "bias-scan": (cmd_bias_scan, "DPS vs DInG transition gaps over eta"),
    "ablation": (cmd_ablation, "compare eta schedules for one method"),
    "validate": (cmd_validate, "lint a config and its schedules"),
    "nfe-sweep": (cmd_nfe_sweep, "run methods over several step counts"),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ding", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (handler, help_text) in COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", required=True, metavar="PATH", help="experiment config file")
        sub.add_argument("--seed", type=int, default=None, metavar="N", help="override the master seed")
        sub.add_argument("--out", default=None, metavar="DIR", help="output directory")
        sub.add_argument("--workers", type=int, default=None, metavar="N", help="concurrent chains")
        sub.set_defaults(handler=handler)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=settings.LOG_LEVEL, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.handler(args)
    except ConfigError as e:
        location = f"{args.config}:{e.line}" if e.line is not None else args.config
        print(f"{location}: {e.message}", file=sys.stderr)
        return 2
    except ValueError as e:
        logging.error(f"{args.command} failed: {type(e).__name__}: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
