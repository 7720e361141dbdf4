"""
Command-line entry point: python -m app.main <command> [flags]
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from dotenv import load_dotenv

from app.commands import ALL_COMMANDS, COMMANDS_BY_NAME, BaseCommand
from app.config import get_settings

logger = logging.getLogger(__name__)

_ARG_TYPES = {"integer": int, "float": float, "path": Path, "string": str, "choice": str}


def _add_command(subparsers, command: BaseCommand) -> None:
    parser = subparsers.add_parser(command.name, help=command.description, description=command.description)
    for p in command.parameters:
        if p.type == "boolean":
            parser.add_argument(p.flag, dest=p.name, action="store_true", help=p.description)
            continue
        parser.add_argument(
            p.flag,
            dest=p.name,
            type=_ARG_TYPES[p.type],
            choices=p.choices,
            required=p.required,
            default=p.default,
            help=p.description,
        )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seriesclf",
        description="DICOM series classification from images and sparse acquisition metadata",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for command in ALL_COMMANDS:
        _add_command(subparsers, command)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    # Load environment variables from .env file
    load_dotenv()
    logging.basicConfig(
        level=get_settings().log_level.upper(),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    args = build_parser().parse_args(argv)
    command = COMMANDS_BY_NAME[args.command]
    return command.run(vars(args))


if __name__ == "__main__":
    sys.exit(main())
