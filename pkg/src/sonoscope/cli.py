"""Command-line entry point: ``sonoscope <command> --config FILE``.

Exit status: 0 on success, 1 when some recordings or runs failed or are
missing, 2 when the configuration is invalid.
"""

from __future__ import annotations

import argparse
import logging
import sys

from . import pipeline
from .errors import ConfigError, SonoscopeError

COMMANDS = ("extract", "split", "train", "evaluate", "sweep", "report")


def build_parser():
    parser = argparse.ArgumentParser(prog="sonoscope", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI file with [paths], [audio], ...")
        p.add_argument("--workers", type=int, default=None, help="parallel processes")
        p.add_argument("--combos", default=None,
                       help="'all' or comma-separated combinations such as MFCC,MFCC+STFT")
        p.add_argument("--seeds", default=None, help="comma-separated run seeds")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def run(args) -> int:
    cfg = pipeline.load_config(args.config, combos=args.combos, seeds=args.seeds, workers=args.workers)
    if args.command == "extract":
        return 1 if pipeline.cmd_extract(cfg).failures else 0
    if args.command == "split":
        pipeline.cmd_split(cfg)
        return 0
    if args.command == "train":
        return 1 if pipeline.cmd_train(cfg) else 0
    if args.command == "evaluate":
        return 1 if pipeline.cmd_evaluate(cfg) else 0
    if args.command == "sweep":
        return 1 if pipeline.cmd_sweep(cfg) else 0
    if args.command == "report":
        return 1 if pipeline.cmd_report(cfg) else 0
    raise AssertionError(args.command)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except ConfigError as exc:
        logging.getLogger("sonoscope").error("invalid configuration: %s", exc)
        return 2
    except SonoscopeError as exc:
        logging.getLogger("sonoscope").error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
