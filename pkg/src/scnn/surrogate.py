"""Surrogate classification dataset: proposals of one source image = one class.

Source images are ranked by how many proposals they produced; the top C
become classes 0..C-1, and every proposal crop (resized to 32x32) is a
training example labeled with its source's class.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .datasets import crop, resize_bilinear
from .proposals import ProposalSet

DATASET_MAGIC = b"SCNNDS01"
DEFAULT_PATCH_SIZE = 32


@dataclass
class ClassSelection:
    chosen: list[int]              # source-image indices, descending by count
    label_map: dict[int, int]      # source index -> dense label
    truncated: bool = False        # C exceeded the number of available sources

    @property
    def num_classes(self) -> int:
        return len(self.chosen)


@dataclass
class SurrogateDataset:
    images: np.ndarray  # (N, 32, 32, 3) uint8
    labels: np.ndarray  # (N,) int64 in 0..C-1
    num_classes: int

    def __len__(self) -> int:
        return len(self.labels)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_classes)


def count_proposals(cache: list[ProposalSet]) -> np.ndarray:
    """counts[i] = number of boxes for image index i; missing records are 0."""
    if not cache:
        return np.zeros(0, dtype=np.int64)
    counts = np.zeros(max(ps.image_index for ps in cache) + 1, dtype=np.int64)
    for ps in cache:
        counts[ps.image_index] = len(ps.boxes)
    return counts


def select_top_classes(counts: np.ndarray, c: int) -> ClassSelection:
    """Top-c source indices by descending count, ties to the smaller index."""
    if c < 1:
        raise ValueError("class count must be >= 1")
    order = np.argsort(-np.asarray(counts), kind="stable")
    truncated = c > len(order)
    chosen = [int(i) for i in order[:min(c, len(order))]]
    return ClassSelection(chosen=chosen,
                          label_map={src: j for j, src in enumerate(chosen)},
                          truncated=truncated)


def build_surrogate_dataset(images, cache: list[ProposalSet], sel: ClassSelection,
                            patch: int = DEFAULT_PATCH_SIZE) -> SurrogateDataset:
    """Crop and resize every cached box of every chosen source image.

    Example order is chosen-class order, then box order within the source.
    """
    by_index = {ps.image_index: ps for ps in cache}
    out_images: list[np.ndarray] = []
    out_labels: list[int] = []
    for src in sel.chosen:
        ps = by_index.get(src)
        if ps is None:
            continue
        img = images[src]
        label = sel.label_map[src]
        for box in ps.boxes:
            h, w = img.shape[:2]
            if box.bottom >= h or box.right >= w:
                raise ValueError(f"image {src}: box {box} outside {h}x{w} bounds")
            out_images.append(resize_bilinear(crop(img, box), patch, patch))
            out_labels.append(label)
    images_arr = (np.stack(out_images) if out_images
                  else np.zeros((0, patch, patch, 3), dtype=np.uint8))
    return SurrogateDataset(images=images_arr,
                            labels=np.array(out_labels, dtype=np.int64),
                            num_classes=sel.num_classes)


def shuffle_split(ds: SurrogateDataset, seed: int,
                  holdout_fraction: float) -> tuple[SurrogateDataset, SurrogateDataset]:
    """Seeded stratified split; per-class holdout size is round(frac * count)."""
    if not 0 <= holdout_fraction < 1:
        raise ValueError("holdout_fraction must be in [0, 1)")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(len(ds))
    train_idx: list[int] = []
    hold_idx: list[int] = []
    for cls in range(ds.num_classes):
        members = perm[ds.labels[perm] == cls]
        n_hold = int(round(holdout_fraction * len(members)))
        hold_idx.extend(members[:n_hold].tolist())
        train_idx.extend(members[n_hold:].tolist())
    train_idx.sort()
    hold_idx.sort()

    def subset(idx):
        idx = np.array(idx, dtype=np.int64)
        return SurrogateDataset(ds.images[idx], ds.labels[idx], ds.num_classes)

    return subset(train_idx), subset(hold_idx)


def write_surrogate_dataset(path: Path, ds: SurrogateDataset) -> None:
    with open(path, "wb") as fh:
        fh.write(DATASET_MAGIC)
        fh.write(struct.pack("<II", len(ds), ds.num_classes))
        for img, label in zip(ds.images, ds.labels):
            fh.write(struct.pack("<I", int(label)))
            fh.write(img.tobytes())


def read_surrogate_dataset(path: Path) -> SurrogateDataset:
    data = Path(path).read_bytes()
    if data[:8] != DATASET_MAGIC:
        raise ValueError(f"{path}: bad surrogate dataset magic {data[:8]!r}")
    count, num_classes = struct.unpack_from("<II", data, 8)
    record = 4 + 3072
    if len(data) != 16 + count * record:
        raise ValueError(f"{path}: expected {16 + count * record} bytes, got {len(data)}")
    images = np.zeros((count, 32, 32, 3), dtype=np.uint8)
    labels = np.zeros(count, dtype=np.int64)
    for i in range(count):
        pos = 16 + i * record
        labels[i] = struct.unpack_from("<I", data, pos)[0]
        images[i] = np.frombuffer(data, dtype=np.uint8, count=3072,
                                  offset=pos + 4).reshape(32, 32, 3)
    return SurrogateDataset(images=images, labels=labels, num_classes=num_classes)
