# Command-line entry point: argument parsing, service orchestration, exit codes
import argparse
import logging
import os
import sys

# Allow `python app/main.py` as well as `python -m app.main` from the project root
SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
PARENT_DIR = os.path.dirname(SCRIPT_DIR)
sys.path.insert(0, PARENT_DIR)

from app.services.config_service import ConfigService
from app.services.export_service import ExportService
from app.services.problem_service import SUBCOMMANDS, VERIFY, ProblemService
from app.utils.errors import ConfigError, HeatControlError, exit_code_for
from app.utils.logging_config import DEFAULT_LOG_LEVEL, parse_log_level, setup_logging

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_VERIFICATION_FAILED = 4


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description='Optimal target, norm and time control of the internally controlled heat equation')
    parser.add_argument('subcommand', choices=SUBCOMMANDS, help='Problem to solve')
    parser.add_argument('--config', default=None, help='Flat JSON config overlaid on the shipped defaults')
    parser.add_argument('--out', default='out', help='Output directory for CSV / JSON results (default: out)')
    parser.add_argument('--seed', type=int, default=None, help='Override the config seed')
    parser.add_argument('--refine', type=int, default=0, help='Halve dt this many times (default: 0)')
    parser.add_argument('--log-file', action='store_true', help='Also write run.log into the output directory')
    parser.add_argument(
        '--log-level',
        default=logging.getLevelName(DEFAULT_LOG_LEVEL),
        choices=['DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'],
        help='Set the logging level (default: INFO)'
    )
    return parser


def run(subcommand: str, config_path: str | None, out_dir: str, seed: int | None = None,
        refine: int = 0) -> int:
    """Run one subcommand and write its result files; returns the process exit code."""
    try:
        if refine < 0:
            raise ConfigError(f"--refine must be >= 0, got {refine}")
        overrides = {'seed': seed} if seed is not None else None
        config_service = ConfigService(config_path=config_path, overrides=overrides)
        export_service = ExportService(out_dir)
        problem_service = ProblemService(config_service, export_service, refine=refine)
        summary = problem_service.run(subcommand)
        export_service.flush()
    except HeatControlError as e:
        logger.error(f"{subcommand} failed: {e}")
        return exit_code_for(e)

    if subcommand == VERIFY and not summary['passed']:
        logger.error("Verification reported failing checks")
        return EXIT_VERIFICATION_FAILED
    logger.info(f"{subcommand} finished")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    setup_logging(level=parse_log_level(args.log_level), log_dir=args.out if args.log_file else None)
    logger.info(f"Logging level set to: {args.log_level}")
    return run(args.subcommand, args.config, args.out, seed=args.seed, refine=args.refine)


if __name__ == "__main__":
    sys.exit(main())
