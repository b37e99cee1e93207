"""One-vs-all linear SVM on pooled features.

Each class gets an independent binary hinge-loss classifier trained by
seeded stochastic subgradient descent with step 1/(lambda*t); prediction is
the argmax of the per-class scores. Features are standardized with training
statistics.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MODEL_MAGIC = b"SCNNSVM1"
STD_FLOOR = 1e-8


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray  # floored at STD_FLOOR

    @classmethod
    def fit(cls, x: np.ndarray) -> "Standardizer":
        if len(x) < 1:
            raise ValueError("cannot fit standardizer on an empty matrix")
        return cls(mean=x.mean(axis=0),
                   std=np.maximum(x.std(axis=0), STD_FLOOR))

    def apply(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.std


@dataclass
class SvmConfig:
    lam: float = 1e-4
    epochs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.lam <= 0 or self.epochs < 1:
            raise ValueError(f"invalid SVM config: {self}")


@dataclass
class LinearModel:
    weights: np.ndarray  # (classes, dim)
    biases: np.ndarray   # (classes,)
    standardizer: Standardizer
    lam: float
    objective_log: list[list[float]] = field(default_factory=list)


def hinge_objective(w: np.ndarray, b: float, x: np.ndarray, y: np.ndarray,
                    lam: float) -> float:
    """lam/2 * ||w||^2 + mean hinge loss; y is +-1."""
    margins = np.maximum(0.0, 1.0 - y * (x @ w + b))
    return 0.5 * lam * float(w @ w) + float(margins.mean())


def _train_binary(x: np.ndarray, y: np.ndarray, cfg: SvmConfig,
                  class_id: int) -> tuple[np.ndarray, float, list[float]]:
    """Pegasos-style pass: step 1/(lam*t) on the regularized hinge objective.

    The unregularized bias uses the same step capped at 1 so early iterates
    (where 1/(lam*t) is huge) cannot throw it far off.
    """
    n, dim = x.shape
    rng = np.random.default_rng([cfg.seed, class_id])
    w = np.zeros(dim)
    b = 0.0
    t = 0
    log = []
    for _ in range(cfg.epochs):
        for i in rng.permutation(n):
            t += 1
            eta = 1.0 / (cfg.lam * t)
            margin = y[i] * (x[i] @ w + b)
            w *= 1.0 - eta * cfg.lam
            if margin < 1.0:
                w += eta * y[i] * x[i]
                b += min(eta, 1.0) * y[i]
        log.append(hinge_objective(w, b, x, y, cfg.lam))
    return w, b, log


def train_ova(x: np.ndarray, y: np.ndarray, cfg: SvmConfig) -> LinearModel:
    """K independent class-vs-rest classifiers on standardized features."""
    classes = int(y.max()) + 1
    if len(np.unique(y)) < 2:
        raise ValueError("one-vs-all training needs at least two classes present")
    standardizer = Standardizer.fit(x)
    xs = standardizer.apply(x)
    weights = np.zeros((classes, x.shape[1]))
    biases = np.zeros(classes)
    logs = []
    for k in range(classes):
        targets = np.where(y == k, 1.0, -1.0)
        weights[k], biases[k], log = _train_binary(xs, targets, cfg, k)
        logs.append(log)
    return LinearModel(weights=weights, biases=biases, standardizer=standardizer,
                       lam=cfg.lam, objective_log=logs)


def decision_scores(model: LinearModel, x: np.ndarray) -> np.ndarray:
    if x.shape[1] != model.weights.shape[1]:
        raise ValueError(f"feature dim {x.shape[1]} != model dim {model.weights.shape[1]}")
    return model.standardizer.apply(x) @ model.weights.T + model.biases


def predict(model: LinearModel, x: np.ndarray) -> np.ndarray:
    return np.argmax(decision_scores(model, x), axis=1)  # ties to smaller id


def accuracy(model: LinearModel, x: np.ndarray, y: np.ndarray) -> float:
    return float((predict(model, x) == y).mean())


def evaluate_stl_folds(x_train: np.ndarray, y_train: np.ndarray,
                       folds: list[np.ndarray], x_test: np.ndarray,
                       y_test: np.ndarray, cfg: SvmConfig) -> tuple[list[float], float]:
    """Train one SVM per predefined fold; report per-fold test accuracies."""
    accs = []
    for fold in folds:
        if len(fold) == 0:
            raise ValueError("empty evaluation fold")
        model = train_ova(x_train[fold], y_train[fold], cfg)
        accs.append(accuracy(model, x_test, y_test))
    return accs, float(np.mean(accs))


def write_model(path: Path, model: LinearModel) -> None:
    classes, dim = model.weights.shape
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", classes, dim))
        fh.write(model.weights.astype("<f4").tobytes())
        fh.write(model.biases.astype("<f4").tobytes())
        fh.write(model.standardizer.mean.astype("<f4").tobytes())
        fh.write(model.standardizer.std.astype("<f4").tobytes())
        fh.write(struct.pack("<d", model.lam))


def read_model(path: Path) -> LinearModel:
    data = Path(path).read_bytes()
    if data[:8] != MODEL_MAGIC:
        raise ValueError(f"{path}: bad model magic {data[:8]!r}")
    classes, dim = struct.unpack_from("<II", data, 8)
    expected = 16 + 4 * (classes * dim + classes + 2 * dim) + 8
    if len(data) != expected:
        raise ValueError(f"{path}: expected {expected} bytes, got {len(data)}")
    pos = 16

    def take(count):
        nonlocal pos
        vals = np.frombuffer(data, dtype="<f4", count=count, offset=pos).astype(np.float64)
        pos += 4 * count
        return vals

    weights = take(classes * dim).reshape(classes, dim)
    biases = take(classes)
    mean = take(dim)
    std = take(dim)
    lam, = struct.unpack_from("<d", data, pos)
    return LinearModel(weights=weights, biases=biases,
                       standardizer=Standardizer(mean=mean, std=std), lam=lam)
