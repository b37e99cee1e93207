"""Experiment configuration: flat key=value sections in an INI-style file."""

from __future__ import annotations

import configparser
import os
from dataclasses import dataclass, field
from pathlib import Path

from .nn import PRESETS, TrainConfig
from .segmentation import SegParams
from .svm import SvmConfig


class ConfigError(ValueError):
    """Invalid or missing configuration (CLI exit code 2)."""


@dataclass
class ExperimentConfig:
    data_root: Path
    output_dir: Path
    seed: int = 0
    threads: int = 1
    unlabeled_limit: int | None = None
    train_limit: int | None = None
    test_limit: int | None = None
    seg: SegParams = field(default_factory=SegParams)
    min_box_side: int = 16
    num_classes: int = 100
    holdout_fraction: float = 0.02
    preset: str = "net_small"
    train_cfg: TrainConfig = field(default_factory=TrainConfig)
    svm_cfg: SvmConfig = field(default_factory=SvmConfig)
    c_sweep: list[int] = field(default_factory=list)
    transfer_target: str = "cifar10"
    transfer_train_limit: int | None = None
    transfer_test_limit: int | None = None

    def __post_init__(self):
        if self.preset not in PRESETS:
            raise ConfigError(f"unknown network preset {self.preset!r}; "
                              f"choose from {sorted(PRESETS)}")
        if self.num_classes < 1:
            raise ConfigError("surrogate num_classes must be >= 1")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")


def _get(parser, section, key, convert, default):
    if not parser.has_option(section, key):
        return default
    raw = parser.get(section, key).strip()
    if raw == "":
        return default
    try:
        return convert(raw)
    except ValueError as exc:
        raise ConfigError(f"[{section}] {key}={raw!r}: {exc}") from exc


def load_config(path: Path, seed_override: int | None = None,
                threads_override: int | None = None) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from exc

    g = lambda sec, key, conv, default=None: _get(parser, sec, key, conv, default)
    root = g("data", "root", str) or os.environ.get("SCNN_DATA_ROOT")
    if not root:
        raise ConfigError("dataset root missing: set [data] root or SCNN_DATA_ROOT")
    output_dir = g("harness", "output_dir", str)
    if not output_dir:
        raise ConfigError("missing [harness] output_dir")

    try:
        seg = SegParams(sigma=g("segmentation", "sigma", float, 0.8),
                        k=g("segmentation", "k", float, 200.0),
                        min_size=g("segmentation", "min_size", int, 50))
        train_cfg = TrainConfig(
            lr=g("nn", "lr", float, 0.01),
            lr_decay_factor=g("nn", "lr_decay_factor", float, 0.1),
            lr_decay_epoch=g("nn", "lr_decay_epoch", int),
            momentum=g("nn", "momentum", float, 0.9),
            weight_decay=g("nn", "weight_decay", float, 5e-4),
            batch_size=g("nn", "batch_size", int, 128),
            epochs=g("nn", "epochs", int, 30),
        )
        svm_cfg = SvmConfig(lam=g("svm", "lambda", float, 1e-4),
                            epochs=g("svm", "epochs", int, 20))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc

    sweep_raw = g("experiment", "c_sweep", str, "")
    c_sweep = [int(tok) for tok in sweep_raw.replace(",", " ").split()] if sweep_raw else []

    cfg = ExperimentConfig(
        data_root=Path(root),
        output_dir=Path(output_dir),
        seed=g("harness", "seed", int, 0),
        threads=g("harness", "threads", int, 1),
        unlabeled_limit=g("data", "unlabeled_limit", int),
        train_limit=g("data", "train_limit", int),
        test_limit=g("data", "test_limit", int),
        seg=seg,
        min_box_side=g("proposals", "min_box_side", int, 16),
        num_classes=g("surrogate", "num_classes", int, 100),
        holdout_fraction=g("surrogate", "holdout_fraction", float, 0.02),
        preset=g("nn", "preset", str, "net_small"),
        train_cfg=train_cfg,
        svm_cfg=svm_cfg,
        c_sweep=c_sweep,
        transfer_target=g("transfer", "target", str, "cifar10"),
        transfer_train_limit=g("transfer", "train_limit", int),
        transfer_test_limit=g("transfer", "test_limit", int),
    )
    if seed_override is not None:
        cfg.seed = seed_override
    if threads_override is not None:
        cfg.threads = threads_override
    cfg.train_cfg.seed = cfg.seed
    cfg.svm_cfg.seed = cfg.seed
    return cfg
