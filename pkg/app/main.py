import argparse
import json
import logging
import sys

from app.commands import cohort, estimate, fit, report, simulate
from app.config import settings
from app.errors import PipelineError, UsageError

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"


class CliParser(argparse.ArgumentParser):
    def error(self, message: str):
        print(json.dumps(UsageError(message).to_dict(), sort_keys=True), file=sys.stderr)
        self.exit(UsageError.status_code)


def build_parser() -> CliParser:
    parser = CliParser(
        prog=settings.APP_NAME,
        description="Causal-forest estimates of sovereign-debt-crisis effects on child mortality.",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {settings.VERSION}")
    parser.add_argument(
        "--log-level",
        default=settings.LOG_LEVEL,
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity (default from LOG_LEVEL)",
    )
    subparsers = parser.add_subparsers(dest="command", required=True, metavar="command")
    for command in (cohort, fit, estimate, simulate, report):
        command.register(subparsers)
    return parser


def configure_logging(level: str) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, stream=sys.stderr, force=True)


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)

    try:
        args.handler(args)
    except PipelineError as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        print(json.dumps(exc.to_dict(), sort_keys=True), file=sys.stderr)
        return exc.status_code
    except Exception as exc:
        logger.exception("%s crashed", args.command)
        print(
            json.dumps({"status": 1, "error": type(exc).__name__, "detail": " ".join(str(exc).split())}, sort_keys=True),
            file=sys.stderr,
        )
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
