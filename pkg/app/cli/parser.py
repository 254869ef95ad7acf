"""
parser.py
---------
``mlc <verb> [options]`` argument parsing and dispatch with exit codes:

    0  success
    1  usage, config, missing-file or artifact error
    2  numeric failure
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import NoReturn, Sequence

from pydantic import ValidationError

from app import __version__
from app.cli.commands import run_command
from app.core.errors import ArtifactError, ConfigError, MlcError, NumericError, ShapeError, UsageError
from app.schemas.cli import CliCommand

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2

VERB_HELP = {
    "synth": "generate the two-manifold synthetic dataset",
    "train-tcr": "Stage 1: self-supervised feature initialization",
    "train-mlc": "Stage 2: joint feature and membership training",
    "eval": "full-data membership, spectral clustering and metrics",
    "full": "run every stage and the readout",
    "ablate": "full / no-stage-1 / no-augmentation / no-mlc comparison",
    "stability": "repeat Stage 2 and the readout for several seeds",
}


class MlcArgumentParser(argparse.ArgumentParser):
    """Raises ``UsageError`` instead of exiting on bad arguments."""

    def error(self, message: str) -> NoReturn:
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL")


def _log_level(text: str) -> str:
    level = text.strip().upper()
    if level not in LOG_LEVELS:
        raise argparse.ArgumentTypeError(f"unknown log level {text!r}; choose from {', '.join(LOG_LEVELS)}")
    return level


def _seed_list(text: str) -> list[int]:
    try:
        seeds = [int(part) for part in text.split(",") if part.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc
    if not seeds:
        raise argparse.ArgumentTypeError("at least one seed is required")
    return seeds


def build_parser() -> MlcArgumentParser:
    parser = MlcArgumentParser(prog="mlc", description="Manifold linearizing and clustering")
    parser.add_argument("--version", action="version", version=f"mlc {__version__}")
    parser.add_argument("--log-level", type=_log_level, default=None, help="overrides MLC_LOG_LEVEL")
    verbs = parser.add_subparsers(dest="verb", required=True, metavar="verb")
    for verb, text in VERB_HELP.items():
        sub = verbs.add_parser(verb, help=text, description=text)
        sub.add_argument("--config", type=Path, default=None, help="key = value config file")
        sub.add_argument("--out", type=Path, required=True, help="output directory")
        sub.add_argument("--seed", type=int, default=None, help="override master_seed")
        if verb != "synth":
            sub.add_argument("--data", type=Path, default=None, help="dataset directory from 'synth'")
        if verb in ("train-mlc", "eval"):
            sub.add_argument("--params", type=Path, default=None, help="head parameter directory")
        if verb == "stability":
            sub.add_argument("--seeds", type=_seed_list, default=[], help="e.g. 0,1,2")
    return parser


def parse_command(argv: Sequence[str]) -> tuple[CliCommand, str | None]:
    ns = build_parser().parse_args(list(argv))
    try:
        cmd = CliCommand(
            verb=ns.verb,
            config_path=ns.config,
            output_dir=ns.out,
            seed=ns.seed,
            data_dir=getattr(ns, "data", None),
            params_dir=getattr(ns, "params", None),
            seeds=getattr(ns, "seeds", []),
        )
    except ValidationError as exc:
        first = exc.errors()[0]
        raise UsageError(f"invalid {'.'.join(str(p) for p in first['loc'])}: {first['msg']}") from exc
    return cmd, ns.log_level


def parse_and_dispatch(argv: Sequence[str]) -> int:
    try:
        cmd, log_level = parse_command(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)

    if log_level is not None:
        logging.getLogger().setLevel(log_level)

    try:
        run_command(cmd)
    except (UsageError, ConfigError, ArtifactError, ShapeError, FileNotFoundError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except MlcError as exc:
        kind = "numeric failure" if isinstance(exc, NumericError) else "internal error"
        print(f"{kind}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK
