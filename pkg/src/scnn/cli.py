"""Command-line entry point.

Usage: scnn proposals|surrogate|train|extract|svm|experiment|transfer
       --config <path> [--threads N] [--seed S] [--target cifar10|cifar100]

Exit codes: 0 ok, 2 config error, 3 stage/staleness error, 4 numeric divergence.
"""

from __future__ import annotations

import argparse
import sys

from .config import ConfigError, load_config
from .datasets import DatasetFormatError
from .harness import (StageError, cmd_experiment, cmd_extract, cmd_proposals,
                      cmd_surrogate, cmd_svm, cmd_train, cmd_transfer)
from .nn import NumericError

COMMANDS = {
    "proposals": cmd_proposals,
    "surrogate": cmd_surrogate,
    "train": cmd_train,
    "extract": cmd_extract,
    "svm": cmd_svm,
    "experiment": cmd_experiment,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="scnn",
        description="Unsupervised feature learning from selective-search proposals: "
                    "generate proposals, train a surrogate-class CNN, extract "
                    "quadrant-pooled features, and evaluate with a linear SVM.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, doc in [
        ("proposals", "run selective search over the unlabeled set and cache the boxes"),
        ("surrogate", "build the surrogate classification dataset from cached proposals"),
        ("train", "train the CNN on the surrogate dataset (resumes from checkpoint)"),
        ("extract", "extract 4-quadrant max-pooled features for the STL splits"),
        ("svm", "train/evaluate the one-vs-all SVM over the 10 STL folds"),
        ("experiment", "sweep the class count C and tabulate mean accuracies"),
        ("transfer", "evaluate the learned features on a CIFAR dataset"),
    ]:
        p = sub.add_parser(name, help=doc)
        p.add_argument("--config", required=True, help="INI-style experiment config "
                       "(defaults documented in the README; [data] root falls back "
                       "to the SCNN_DATA_ROOT environment variable)")
        p.add_argument("--threads", type=int, default=None,
                       help="worker threads; 1 guarantees bitwise reproducibility")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if name == "transfer":
            p.add_argument("--target", choices=["cifar10", "cifar100"], default=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, seed_override=args.seed,
                          threads_override=args.threads)
        if args.command == "transfer":
            cmd_transfer(cfg, target=args.target)
        else:
            COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (StageError, DatasetFormatError, FileNotFoundError, ValueError) as exc:
        print(f"stage error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric divergence: {exc}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
