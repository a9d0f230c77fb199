"""
Run one dynamic-snake experiment from a config file.

Usage:
    snake configs/evolve_bowl.cfg
    snake configs/certify_inverted_bowl.cfg --out results/certify --render
    snake my.cfg --no-strict --log-level INFO

Exit status: 0 on success, 2 when a certificate or stopping criterion fails,
1 on any error.
"""

from __future__ import annotations

import argparse
import logging
import sys

from dynsnake.errors import SnakeError
from dynsnake.experiment import EXIT_ERROR, load_config, run
from dynsnake.settings import configure_logging, load_settings, require_settings

logger = logging.getLogger(__name__)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="snake",
        description="Dynamic snake experiments: evolve, certify, modal, capture",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=__doc__,
    )
    parser.add_argument("config", help="Path to the experiment config file")
    parser.add_argument("--out", "-o", help="Output directory (default: [output] dir, then SNAKE_OUT_DIR)")
    parser.add_argument("--render", action="store_true", default=None, help="Write overlay.svg and field.pgm")
    parser.add_argument(
        "--strict",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="Reject unknown config keys (default); --no-strict only warns",
    )
    parser.add_argument("--log-level", help="Logging level (default from SNAKE_LOG_LEVEL, else WARNING)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        settings = load_settings(overrides={"log_level": args.log_level})
        require_settings(settings, ["out_dir", "log_level"], "SNAKE_OUT_DIR, SNAKE_LOG_LEVEL")
        configure_logging(settings["log_level"])
        config = load_config(args.config, strict=args.strict)
        out_dir = args.out or config.out_dir or settings["out_dir"]
        return run(config, out_dir=out_dir, render=args.render)
    except (SnakeError, OSError) as exc:
        print(f"snake: error: {exc}", file=sys.stderr)
        logger.debug("experiment failed", exc_info=True)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
