"""Command-line entry point.

Grammar: ``tesage <subcommand> --config <path> [overrides]`` with
subcommands generate, discover, train, eval, explain, report. The
``TESAGE_LOG`` environment variable sets the log level (default INFO).
"""

from __future__ import annotations

import argparse
import logging
import os
import sys

from . import __version__
from .causal import GRAPH_FORMAT_VERSION
from .config import load_config
from .errors import TesageError
from .pipeline import run_discover, run_eval, run_explain, run_generate, run_report, run_train
from .sage import CHECKPOINT_FORMAT_VERSION
from .waveforms import DATASET_FORMAT_VERSION

log = logging.getLogger("tesage")

_VERSION_TEXT = (
    f"tesage {__version__} "
    f"(dataset format {DATASET_FORMAT_VERSION}, graph format {GRAPH_FORMAT_VERSION}, "
    f"checkpoint format {CHECKPOINT_FORMAT_VERSION})"
)


def _add_common(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--config", required=True, help="path to the pipeline config JSON")
    sub.add_argument("--seed", type=int, default=None, help="override the master seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tesage",
        description=(
            "Discover transfer-entropy causal graphs from fault waveforms, classify them "
            "with a GraphSAGE model, and explain the predictions."
        ),
    )
    parser.add_argument("--version", action="version", version=_VERSION_TEXT)
    commands = parser.add_subparsers(dest="command", required=True)

    p = commands.add_parser("generate", help="synthesize the labeled waveform dataset")
    _add_common(p)
    p.add_argument("--per-class", type=int, default=None, help="instances per fault class")
    p.add_argument("--samples", type=int, default=None, help="samples per instance")

    p = commands.add_parser("discover", help="build causal graphs from the dataset")
    _add_common(p)
    p.add_argument("--threshold", type=float, default=None, help="edge threshold on normalized TE")
    p.add_argument("--bins", type=int, default=None, help="discretization bins for TE")

    p = commands.add_parser("train", help="train the graph classifier")
    _add_common(p)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)

    p = commands.add_parser("eval", help="evaluate the checkpoint on the held-out split")
    _add_common(p)

    p = commands.add_parser("explain", help="attribute predictions to channel nodes")
    _add_common(p)
    p.add_argument("--ig-steps", type=int, default=None)
    p.add_argument("--mask-epochs", type=int, default=None)

    p = commands.add_parser("report", help="consolidate metrics, rankings, and figures")
    _add_common(p)

    return parser


_OVERRIDE_KEYS = {
    "seed": "seed",
    "per_class": "dataset.per_class",
    "samples": "dataset.sample_count",
    "threshold": "te.threshold",
    "bins": "te.bins",
    "epochs": "model.epochs",
    "lr": "model.lr",
    "ig_steps": "explain.ig_steps",
    "mask_epochs": "explain.mask_epochs",
}

_RUNNERS = {
    "generate": run_generate,
    "discover": run_discover,
    "train": run_train,
    "eval": run_eval,
    "explain": run_explain,
    "report": run_report,
}


def _overrides_from(args: argparse.Namespace) -> dict:
    overrides = {}
    for attr, dotted in _OVERRIDE_KEYS.items():
        value = getattr(args, attr, None)
        if value is not None:
            overrides[dotted] = value
    return overrides


def main(argv=None) -> int:
    logging.basicConfig(
        level=os.environ.get("TESAGE_LOG", "INFO").upper(),
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, _overrides_from(args))
        _RUNNERS[args.command](cfg)
    except TesageError as exc:
        log.error("%s", exc)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
