from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Sequence

from blowup_lab.cli.dependencies import build_services
from blowup_lab.cli.run import TaskRunner
from blowup_lab.data.artifact_repo import ArtifactIOError
from blowup_lab.data.spec_repo import SpecError
from blowup_lab.numerics.errors import NumericalError

logger = logging.getLogger("blowup_lab")

EXIT_OK = 0
EXIT_IO = 1
EXIT_SPEC = 2
EXIT_NUMERICAL = 3
EXIT_VERIFY = 4

_LEVELS = {0: logging.WARNING, 1: logging.INFO, 2: logging.DEBUG}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blowup-lab",
        description="Green's functions, interaction matrices and blow-up rates for critical problems in 3D.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="Run the task described by a JSON problem spec")
    run.add_argument("--spec", type=Path, required=True, help="JSON problem spec")
    run.add_argument("--out-dir", type=Path, required=True, help="Directory for artifacts")
    run.add_argument("--threads", type=int, default=1, help="Worker threads for independent solves")
    run.add_argument("--verbosity", type=int, choices=sorted(_LEVELS), default=0)
    return parser


def run_command(args: argparse.Namespace) -> int:
    if args.threads < 1:
        logger.error("--threads must be at least 1")
        return EXIT_SPEC
    services = build_services(threads=args.threads)
    try:
        spec = services.spec_repo.load(args.spec)
        report = TaskRunner(services, args.out_dir).run(spec)
    except SpecError as e:
        logger.error("spec error: %s", e)
        return EXIT_SPEC
    except NumericalError as e:
        logger.error("numerical failure (%s): %s", type(e).__name__, e)
        return EXIT_NUMERICAL
    except (ArtifactIOError, OSError) as e:
        logger.error("i/o error: %s", e)
        return EXIT_IO

    if report.failed_checks:
        for check in report.failed_checks:
            logger.error("check %s failed: value=%s expected=%s %s",
                         check.name, check.value, check.expected, check.detail)
        return EXIT_VERIFY
    return EXIT_OK


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=_LEVELS[args.verbosity],
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if args.command == "run":
        return run_command(args)
    return EXIT_SPEC


if __name__ == "__main__":
    sys.exit(main())
