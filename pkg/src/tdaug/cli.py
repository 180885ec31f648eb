"""Command-line entry point: ``tdaug <command> --config FILE [--set k=v ...] [--out DIR]``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from .pipeline import COMMANDS, run_command


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tdaug",
        description="Augment a parallel corpus with rare words placed in new contexts.",
    )
    parser.add_argument("command", choices=COMMANDS, metavar="command",
                        help="one of: " + ", ".join(COMMANDS))
    parser.add_argument("--config", "-c", help="YAML run configuration")
    parser.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. augment.top_k=50 (repeatable)")
    parser.add_argument("--out", "-o", help="output directory (overrides output_dir)")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    logging.getLogger("tdaug").setLevel(logging.INFO)
    # imported late so --help stays fast
    from .config import parse_config

    overrides = list(args.overrides)
    try:
        cfg = parse_config(args.config, overrides)
        if args.out:
            cfg.output_dir = str(Path(args.out).resolve())  # relative to the working directory
        manifest = run_command(args.command, cfg)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"tdaug {args.command}: error: {exc}", file=sys.stderr)
        return 1
    print(manifest)
    return 0


if __name__ == "__main__":
    sys.exit(main())
