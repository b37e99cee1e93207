"""Binary dataset readers (STL-10, CIFAR) and basic image primitives.

Images are numpy uint8 arrays of shape (H, W, 3), row-major RGB.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

STL_SIDE = 96
STL_RECORD_BYTES = STL_SIDE * STL_SIDE * 3  # 27648
CIFAR_SIDE = 32
CIFAR10_RECORD_BYTES = 1 + 3072
CIFAR100_RECORD_BYTES = 2 + 3072


class DatasetFormatError(ValueError):
    """Raised when a dataset file does not match its declared binary layout."""


class DatasetKind(Enum):
    STL10_UNLABELED = "stl10-unlabeled"
    STL10_TRAIN = "stl10-train"
    STL10_TEST = "stl10-test"
    CIFAR10_TRAIN = "cifar10-train"
    CIFAR10_TEST = "cifar10-test"
    CIFAR100_TRAIN = "cifar100-train"
    CIFAR100_TEST = "cifar100-test"


@dataclass(frozen=True)
class DatasetSpec:
    kind: DatasetKind
    root: Path
    limit: int | None = None


@dataclass(frozen=True)
class BoundingBox:
    """Inclusive pixel-coordinate box."""

    top: int
    left: int
    bottom: int
    right: int

    @property
    def height(self) -> int:
        return self.bottom - self.top + 1

    @property
    def width(self) -> int:
        return self.right - self.left + 1

    @property
    def area(self) -> int:
        return self.height * self.width


@dataclass
class LabeledExample:
    image: np.ndarray
    label: int


def _read_records(path: Path, record_bytes: int, limit: int | None) -> np.ndarray:
    size = os.path.getsize(path)
    if size % record_bytes != 0:
        offset = (size // record_bytes) * record_bytes
        raise DatasetFormatError(
            f"{path}: size {size} is not a multiple of the {record_bytes}-byte "
            f"record (truncated at byte {offset})"
        )
    count = size // record_bytes
    if limit is not None:
        count = min(count, limit)
    raw = np.fromfile(path, dtype=np.uint8, count=count * record_bytes)
    return raw.reshape(count, record_bytes)


def decode_stl_record(record: np.ndarray) -> np.ndarray:
    """Decode one 27648-byte STL record: 3 channel planes, each column-major."""
    planes = record.reshape(3, STL_SIDE, STL_SIDE)
    # plane axes are (col, row) on disk; transpose to (row, col) per channel
    return np.ascontiguousarray(planes.transpose(2, 1, 0))


def encode_stl_record(img: np.ndarray) -> bytes:
    assert img.shape == (STL_SIDE, STL_SIDE, 3)
    return np.ascontiguousarray(img.transpose(2, 1, 0)).tobytes()


def load_stl10(spec: DatasetSpec):
    """Load an STL-10 split.

    Returns a list of images for the unlabeled split, or a list of
    LabeledExample for train/test. Loading the train split also exposes the
    predefined folds via :func:`load_stl10_folds`.
    """
    root = Path(spec.root)
    if spec.kind is DatasetKind.STL10_UNLABELED:
        records = _read_records(root / "unlabeled_X.bin", STL_RECORD_BYTES, spec.limit)
        return [decode_stl_record(r) for r in records]
    if spec.kind is DatasetKind.STL10_TRAIN:
        x_name, y_name = "train_X.bin", "train_y.bin"
    elif spec.kind is DatasetKind.STL10_TEST:
        x_name, y_name = "test_X.bin", "test_y.bin"
    else:
        raise ValueError(f"not an STL-10 kind: {spec.kind}")
    records = _read_records(root / x_name, STL_RECORD_BYTES, spec.limit)
    labels = np.fromfile(root / y_name, dtype=np.uint8, count=len(records))
    if len(labels) < len(records):
        raise DatasetFormatError(f"{root / y_name}: fewer labels than images")
    out = []
    for i, rec in enumerate(records):
        label = int(labels[i])
        if not 1 <= label <= 10:
            raise DatasetFormatError(f"{root / y_name}: label {label} at record {i} outside 1..10")
        out.append(LabeledExample(decode_stl_record(rec), label - 1))
    return out


def load_stl10_folds(root: Path) -> list[np.ndarray]:
    """Parse fold_indices.txt: 10 lines of space-separated 0-based indices."""
    lines = Path(root, "fold_indices.txt").read_text().strip().splitlines()
    if len(lines) != 10:
        raise DatasetFormatError(f"fold_indices.txt: expected 10 lines, got {len(lines)}")
    return [np.array([int(t) for t in line.split()], dtype=np.int64) for line in lines]


def decode_cifar_record(pixels: np.ndarray) -> np.ndarray:
    """Decode 3072 plane bytes (R, G, B planes, each row-major 32x32)."""
    return np.ascontiguousarray(pixels.reshape(3, CIFAR_SIDE, CIFAR_SIDE).transpose(1, 2, 0))


def encode_cifar_record(img: np.ndarray) -> bytes:
    assert img.shape == (CIFAR_SIDE, CIFAR_SIDE, 3)
    return np.ascontiguousarray(img.transpose(2, 0, 1)).tobytes()


_CIFAR_FILES = {
    DatasetKind.CIFAR10_TRAIN: (
        [f"data_batch_{i}.bin" for i in range(1, 6)], CIFAR10_RECORD_BYTES, 10),
    DatasetKind.CIFAR10_TEST: (["test_batch.bin"], CIFAR10_RECORD_BYTES, 10),
    DatasetKind.CIFAR100_TRAIN: (["train.bin"], CIFAR100_RECORD_BYTES, 100),
    DatasetKind.CIFAR100_TEST: (["test.bin"], CIFAR100_RECORD_BYTES, 100),
}


def load_cifar(spec: DatasetSpec) -> list[LabeledExample]:
    """Load CIFAR-10/100 binary batches. CIFAR-100 yields the fine label."""
    if spec.kind not in _CIFAR_FILES:
        raise ValueError(f"not a CIFAR kind: {spec.kind}")
    names, record_bytes, num_classes = _CIFAR_FILES[spec.kind]
    label_byte = record_bytes - 3072 - 1  # 0 for CIFAR-10, 1 (fine) for CIFAR-100
    out: list[LabeledExample] = []
    for name in names:
        path = Path(spec.root) / name
        remaining = None if spec.limit is None else spec.limit - len(out)
        if remaining == 0:
            break
        records = _read_records(path, record_bytes, remaining)
        for i, rec in enumerate(records):
            label = int(rec[label_byte])
            if label >= num_classes:
                raise DatasetFormatError(f"{path}: label {label} at record {i} >= {num_classes}")
            out.append(LabeledExample(decode_cifar_record(rec[record_bytes - 3072:]), label))
    return out


def crop(img: np.ndarray, box: BoundingBox) -> np.ndarray:
    h, w = img.shape[:2]
    if not (0 <= box.top <= box.bottom < h and 0 <= box.left <= box.right < w):
        raise ValueError(f"box {box} outside {h}x{w} image bounds")
    return img[box.top:box.bottom + 1, box.left:box.right + 1].copy()


def resize_bilinear(img: np.ndarray, out_w: int, out_h: int) -> np.ndarray:
    """Bilinear resize with half-pixel sample centers, rounded to uint8.

    Rounding is to nearest with ties away from zero, so results are
    platform-independent.
    """
    if out_w < 1 or out_h < 1:
        raise ValueError("output dimensions must be >= 1")
    in_h, in_w = img.shape[:2]
    src_r = (np.arange(out_h) + 0.5) * in_h / out_h - 0.5
    src_c = (np.arange(out_w) + 0.5) * in_w / out_w - 0.5
    r0 = np.clip(np.floor(src_r).astype(np.int64), 0, in_h - 1)
    c0 = np.clip(np.floor(src_c).astype(np.int64), 0, in_w - 1)
    r1 = np.minimum(r0 + 1, in_h - 1)
    c1 = np.minimum(c0 + 1, in_w - 1)
    fr = np.clip(src_r - r0, 0.0, 1.0)[:, None, None]
    fc = np.clip(src_c - c0, 0.0, 1.0)[None, :, None]
    f = img.astype(np.float64)
    val = (f[r0][:, c0] * (1 - fr) * (1 - fc) + f[r0][:, c1] * (1 - fr) * fc
           + f[r1][:, c0] * fr * (1 - fc) + f[r1][:, c1] * fr * fc)
    return np.floor(val + 0.5).astype(np.uint8)


def rgb_to_hsv(img: np.ndarray) -> np.ndarray:
    """Hexcone RGB->HSV, H in [0, 360), S and V in [0, 1]; gray gets H=S=0."""
    f = img.astype(np.float64) / 255.0
    r, g, b = f[..., 0], f[..., 1], f[..., 2]
    v = f.max(axis=-1)
    c = v - f.min(axis=-1)
    s = np.where(v > 0, c / np.where(v > 0, v, 1.0), 0.0)
    safe_c = np.where(c > 0, c, 1.0)
    h = np.zeros_like(v)
    sel = (c > 0) & (v == r)
    h[sel] = ((g - b)[sel] / safe_c[sel]) % 6.0
    sel = (c > 0) & (v == g) & (v != r)
    h[sel] = (b - r)[sel] / safe_c[sel] + 2.0
    sel = (c > 0) & (v == b) & (v != r) & (v != g)
    h[sel] = (r - g)[sel] / safe_c[sel] + 4.0
    return np.stack([h * 60.0, s, v], axis=-1)
