"""Main entry point for the through-plane super-resolution tools"""

import argparse
import logging
import sys

from cli import data_commands, eval_commands, train_commands
from cli.settings import add_setting, load_run_config, overrides_from
from errors import TvsrError, ValidationError

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

logger = logging.getLogger(__name__)


def build_parser():
    """Build the argument parser with every subcommand"""
    parser = argparse.ArgumentParser(
        prog="tvsr",
        description="Volumetric CT through-plane super-resolution at desk scale",
    )
    parser.add_argument("--config", default=None,
                        help="Settings file with dotted keys (default: ./settings.json when present)")
    add_setting(parser, "--log-level", "log.level", "Logging level", type=str.upper)
    parser.add_argument("--quiet", action="store_true", help="Hide progress bars (default: %(default)s)")
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    data_commands.register(subparsers)
    train_commands.register(subparsers)
    eval_commands.register(subparsers)
    return parser


def configure_logging(level):
    """Configure the root logger once for the whole process"""
    logging.basicConfig(level=getattr(logging, level, logging.INFO), format=LOG_FORMAT, force=True)


def main(argv=None):
    """
    Run one subcommand

    Returns:
        int: 0 on success, 2 for invalid settings or input, 3 for runtime errors
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_run_config(args.config, overrides_from(args))
        configure_logging(config.log_level)
        return args.handler(args, config) or 0
    except ValidationError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except (TvsrError, OSError) as e:
        logger.debug("command failed", exc_info=True)
        print(f"error: {e}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
