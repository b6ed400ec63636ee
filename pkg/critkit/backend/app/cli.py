"""critkit command line.

    python -m app.cli solve --config <path> [--mode nda|transport-eigen|diffusion-eigen|bench] [--out <dir>]

Exit status: 0 on success, 2 for configuration or cross-section input errors,
3 for solver failures.
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from app import __version__
from app.config import load_config
from app.errors import ConfigError, CritkitError, CrossSectionError
from app.runner import run
from app.settings import configure_logging, log_level

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
MODES = ("nda", "transport-eigen", "diffusion-eigen", "bench")


def parse_args(argv: Optional[List[str]] = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(
        prog="python -m app.cli", description="Multigroup slab criticality solver and preconditioner bench"
    )
    parser.add_argument("--version", action="version", version=f"critkit {__version__}")
    commands = parser.add_subparsers(dest="command", required=True)

    solve = commands.add_parser("solve", help="run a configuration and write result files")
    solve.add_argument("--config", required=True, type=Path, help="INI run configuration")
    solve.add_argument("--mode", choices=MODES, default=None, help="overrides [run] mode")
    solve.add_argument("--out", type=Path, default=Path("results"), help="output directory")
    solve.add_argument(
        "--log-level",
        default=log_level(),
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        type=str.upper,
    )
    return parser.parse_args(argv)


def solve(args: argparse.Namespace) -> int:
    try:
        config = load_config(args.config, mode=args.mode)
        logger.debug("loaded %s, mode %s", args.config, config.mode)
        result = run(config, args.out)
    except (ConfigError, CrossSectionError) as e:
        print(f"critkit: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except CritkitError as e:
        print(f"critkit: solver failure: {e}", file=sys.stderr)
        return EXIT_SOLVER

    if result.k is not None:
        print(f"k = {result.k:.12f}")
    print(f"wrote {len(result.rows)} metrics rows to {args.out}")
    return EXIT_OK


def main(argv: Optional[List[str]] = None) -> int:
    args = parse_args(argv)
    configure_logging(args.log_level)
    if args.command == "solve":
        return solve(args)
    return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
