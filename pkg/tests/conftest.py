"""Shared fixtures: synthetic natural-looking images and on-disk datasets."""

from pathlib import Path

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

import numpy as np
import pytest

from scnn.datasets import encode_cifar_record, encode_stl_record, resize_bilinear

CLASS_HUES = np.array([
    [200, 40, 40], [40, 200, 40], [40, 40, 200], [200, 200, 40], [200, 40, 200],
    [40, 200, 200], [230, 130, 30], [130, 30, 230], [30, 230, 130], [120, 120, 120],
], dtype=np.float64)


def blob_image(rng: np.random.Generator, side: int = 96, base_color=None,
               cells: int = 6, noise: float = 8.0) -> np.ndarray:
    """Smooth random color field with a couple of solid shapes on top."""
    low = rng.uniform(0, 255, (cells, cells, 3))
    if base_color is not None:
        low = 0.35 * low + 0.65 * np.asarray(base_color)
    img = resize_bilinear(low.astype(np.uint8), side, side).astype(np.float64)
    for _ in range(rng.integers(1, 4)):
        h = int(rng.integers(side // 6, side // 2))
        w = int(rng.integers(side // 6, side // 2))
        r = int(rng.integers(0, side - h))
        c = int(rng.integers(0, side - w))
        color = rng.uniform(0, 255, 3)
        if base_color is not None:
            color = 0.5 * color + 0.5 * np.asarray(base_color)
        img[r:r + h, c:c + w] = color
    img += rng.normal(0, noise, img.shape)
    return np.clip(img, 0, 255).astype(np.uint8)


def class_image(rng: np.random.Generator, label: int, side: int = 96) -> np.ndarray:
    return blob_image(rng, side=side, base_color=CLASS_HUES[label % 10])


def write_stl_root(root: Path, n_unlabeled: int = 20, n_train: int = 40,
                   n_test: int = 20, n_folds: int = 10, fold_size: int | None = None,
                   seed: int = 0) -> Path:
    """Write a synthetic dataset in the STL-10 binary layout."""
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)
    with open(root / "unlabeled_X.bin", "wb") as fh:
        for _ in range(n_unlabeled):
            fh.write(encode_stl_record(blob_image(rng)))
    for split, count in [("train", n_train), ("test", n_test)]:
        labels = (np.arange(count) % 10).astype(np.uint8)
        rng.shuffle(labels)
        with open(root / f"{split}_X.bin", "wb") as fh:
            for lab in labels:
                fh.write(encode_stl_record(class_image(rng, int(lab))))
        (root / f"{split}_y.bin").write_bytes((labels + 1).tobytes())
    fold_size = fold_size or max(1, n_train // 2)
    lines = []
    for _ in range(n_folds):
        lines.append(" ".join(str(i) for i in
                              sorted(rng.choice(n_train, size=min(fold_size, n_train),
                                                replace=False))))
    (root / "fold_indices.txt").write_text("\n".join(lines) + "\n")
    return root


def write_cifar10_root(root: Path, n_train: int = 60, n_test: int = 30,
                       seed: int = 1) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    def records(count):
        out = bytearray()
        for i in range(count):
            label = int(rng.integers(0, 10))
            out += bytes([label])
            out += encode_cifar_record(class_image(rng, label, side=32))
        return bytes(out)

    per_batch = -(-n_train // 5)
    written = 0
    for b in range(1, 6):
        n = min(per_batch, n_train - written)
        (root / f"data_batch_{b}.bin").write_bytes(records(max(n, 0)))
        written += max(n, 0)
    (root / "test_batch.bin").write_bytes(records(n_test))
    return root


def write_cifar100_root(root: Path, n_train: int = 60, n_test: int = 30,
                        seed: int = 2) -> Path:
    root.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    def records(count):
        out = bytearray()
        for i in range(count):
            fine = int(rng.integers(0, 100))
            out += bytes([fine // 5, fine])
            out += encode_cifar_record(class_image(rng, fine % 10, side=32))
        return bytes(out)

    (root / "train.bin").write_bytes(records(n_train))
    (root / "test.bin").write_bytes(records(n_test))
    return root


@pytest.fixture(scope="session")
def stl_root(tmp_path_factory) -> Path:
    return write_stl_root(tmp_path_factory.mktemp("stl"))


@pytest.fixture(scope="session")
def cifar10_root(tmp_path_factory) -> Path:
    return write_cifar10_root(tmp_path_factory.mktemp("cifar10"))


@pytest.fixture(scope="session")
def cifar100_root(tmp_path_factory) -> Path:
    return write_cifar100_root(tmp_path_factory.mktemp("cifar100"))
