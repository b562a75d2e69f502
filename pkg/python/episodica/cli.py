"""The ``episodica`` command line."""
import argparse
import logging
import logging.config
from pathlib import Path

import yaml

from . import __version__
from .commands import SUBCOMMANDS
from .config import describe_keys
from .exceptions import EpisodicaError
from .render import resource_text

LOG = logging.getLogger(__name__)

LEVELS = {0: "WARNING", 1: "INFO"}


def setup_logging(verbosity: int):
    config = yaml.safe_load(resource_text("logging.yaml"))
    config["handlers"]["console"]["level"] = LEVELS.get(verbosity, "DEBUG")
    logging.config.dictConfig(config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="episodica",
        description="Contrastive pretraining and episodic few-shot evaluation.",
        epilog=describe_keys(),
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")

    base = argparse.ArgumentParser(add_help=False)
    base.add_argument(
        "-v", "--verbose", action="count", default=0, help="-v for INFO, -vv for DEBUG."
    )
    base.add_argument("--config", type=Path, help="Run configuration file.")
    base.add_argument("--seed", type=int, help="Overrides the configured seed.")

    subparsers = parser.add_subparsers(dest="subparser_name")
    for setup_subparser in SUBCOMMANDS:
        setup_subparser(subparsers, [base])
    return parser


def main(args_in=None) -> int:
    parser = build_parser()
    args = parser.parse_args(args=args_in)
    if not hasattr(args, "command"):
        parser.print_help()
        return 0
    setup_logging(args.verbose)
    LOG.debug("Arguments: %s", args)
    try:
        args.command(args)
    except EpisodicaError as e:
        LOG.critical("%s: %s", type(e).__name__, e)
        return e.exit_code
    return 0


def console_main():
    raise SystemExit(main())
