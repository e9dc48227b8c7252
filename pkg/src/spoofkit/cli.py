"""Command line entry point.

One subcommand per pipeline stage; flags are long-form only.  Exit codes:
0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .config import load_config
from .errors import DataError, NumericalError, UsageError
from .pipeline import STAGES, run_pipeline


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="spoofkit",
        description="Audio anti-spoofing pipeline: synthetic corpora, "
                    "spectral features, LCNN training, score fusion and analysis.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug-level logging")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    descriptions = {
        "gen-corpus": "synthesize the desk-scale corpus, noise and RIR pools",
        "extract": "extract dev/eval spectrogram features for every system",
        "train": "train every system and keep the best-dev-loss checkpoint",
        "score": "score dev and eval splits with the trained checkpoints",
        "fuse-fit": "fit fusion weights by logistic regression on dev scores",
        "fuse-apply": "apply fusion weights (and the partial-fake rule) to eval scores",
        "eval": "report EER and Cllr for each system and the fusion",
        "analyze": "export score panels, correlations and polarization indices",
    }
    for stage in STAGES:
        cmd = sub.add_parser(stage, help=descriptions[stage])
        cmd.add_argument("--config", required=True, help="experiment config file")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(format="%(levelname)s %(name)s: %(message)s", level=logging.INFO)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("no command given (see --help)")
        if args.verbose:
            logging.getLogger().setLevel(logging.DEBUG)
        cfg = load_config(args.config)
        run_pipeline(cfg, [args.command])
        return 0
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
