import argparse
import asyncio
import logging
import sys
from typing import List, Optional

from . import __version__
from .config import load_config
from .errors import ConfigError, GranselError
from .handlers.features import register as register_features
from .handlers.report import register as register_report
from .handlers.run import register as register_run
from .handlers.selection import register as register_selection
from .handlers.vocab import register as register_vocab

logger = logging.getLogger("gransel")

LOG_FORMAT = "%(asctime)s - %(levelname)s - %(name)s - %(message)s"


class ArgumentParser(argparse.ArgumentParser):
    """
    Usage errors are config errors (exit code 1), not argparse's exit code 2.
    """

    def error(self, message: str) -> None:  # type: ignore[override]
        raise ConfigError(message)


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="gransel", description="Target-aware corpus selection")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--log-level", help="overrides GRANSEL_LOG_LEVEL")
    parser.add_argument("--progress", action="store_true", help="show progress bars")

    subparsers = parser.add_subparsers(dest="command", required=True)

    # Order: vocabulary, features, selection, end-to-end, reporting
    register_vocab(subparsers)
    register_features(subparsers)
    register_selection(subparsers)
    register_run(subparsers)
    register_report(subparsers)
    return parser


async def main(argv: Optional[List[str]] = None) -> int:
    try:
        app = load_config()
        args = build_parser().parse_args(argv)
    except ConfigError as e:
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logger.error("Invalid arguments: %s", e)
        return e.exit_code

    if args.log_level:
        app.log_level = args.log_level.upper()
    if args.progress:
        app.progress = True
    level = logging.getLevelName(app.log_level)
    if not isinstance(level, int):
        logging.basicConfig(level=logging.INFO, format=LOG_FORMAT)
        logger.error("Unknown log level %s", app.log_level)
        return ConfigError.exit_code
    logging.basicConfig(level=level, format=LOG_FORMAT)

    try:
        return await args.handler(args, app)
    except GranselError as e:
        logger.error("Command %s failed: %s", args.command, e)
        return e.exit_code
    except Exception:
        logger.exception("Command %s failed with an unexpected error", args.command)
        return 3


def run(argv: Optional[List[str]] = None) -> int:
    return asyncio.run(main(argv))


if __name__ == "__main__":
    sys.exit(run())
