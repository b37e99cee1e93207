"""Selective search: hierarchical grouping of superpixels into box proposals.

Starting from the segmentation regions, the most similar neighboring pair is
merged repeatedly until one region remains; every region ever seen (initial
and merged) contributes its bounding box, giving 2n-1 boxes for n superpixels
before deduplication.
"""

from __future__ import annotations

import heapq
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import BoundingBox, rgb_to_hsv
from .segmentation import SegParams, SegmentationResult, felzenszwalb_segment

COLOR_BINS = 25          # per HSV channel, 75 total
TEXTURE_ORIENTATIONS = 8
TEXTURE_MAG_BINS = 10    # 240 total across 3 channels
PROPOSAL_MAGIC = b"SCNNPRP1"


@dataclass
class Region:
    id: int
    size: int
    box: BoundingBox
    color_hist: np.ndarray    # 75 floats, L1-normalized
    texture_hist: np.ndarray  # 240 floats, L1-normalized
    neighbors: set[int] = field(default_factory=set)


@dataclass
class ProposalSet:
    image_index: int
    boxes: list[BoundingBox]


def _region_histogram(labels: np.ndarray, n_regions: int, bin_index: np.ndarray,
                      bins_per_channel: int) -> np.ndarray:
    """Accumulate per-region histograms; bin_index is (H, W, channels)."""
    channels = bin_index.shape[-1]
    width = channels * bins_per_channel
    hist = np.zeros((n_regions, width), dtype=np.float64)
    flat_labels = labels.ravel()
    for c in range(channels):
        combined = flat_labels * width + c * bins_per_channel + bin_index[..., c].ravel()
        hist += np.bincount(combined, minlength=n_regions * width).reshape(n_regions, width)
    sums = hist.sum(axis=1, keepdims=True)
    return hist / np.where(sums > 0, sums, 1.0)


def _color_bin_index(img: np.ndarray) -> np.ndarray:
    hsv = rgb_to_hsv(img)
    hb = np.minimum((hsv[..., 0] / 360.0 * COLOR_BINS).astype(np.int64), COLOR_BINS - 1)
    sb = np.minimum((hsv[..., 1] * COLOR_BINS).astype(np.int64), COLOR_BINS - 1)
    vb = np.minimum((hsv[..., 2] * COLOR_BINS).astype(np.int64), COLOR_BINS - 1)
    return np.stack([hb, sb, vb], axis=-1)


def _texture_bin_index(img: np.ndarray) -> np.ndarray:
    """Per channel: 8 orientation sectors x 10 magnitude bins via finite differences."""
    f = img.astype(np.float64)
    dr = np.gradient(f, axis=0) if f.shape[0] > 1 else np.zeros_like(f)
    dc = np.gradient(f, axis=1) if f.shape[1] > 1 else np.zeros_like(f)
    angle = np.arctan2(dr, dc)  # [-pi, pi]
    sector = np.minimum(((angle + np.pi) / (2 * np.pi) * TEXTURE_ORIENTATIONS).astype(np.int64),
                        TEXTURE_ORIENTATIONS - 1)
    mag = np.sqrt(dr ** 2 + dc ** 2)
    mag_bin = np.minimum((mag / 256.0 * TEXTURE_MAG_BINS).astype(np.int64), TEXTURE_MAG_BINS - 1)
    return sector * TEXTURE_MAG_BINS + mag_bin


def _adjacency_pairs(labels: np.ndarray) -> set[tuple[int, int]]:
    pairs: set[tuple[int, int]] = set()
    shifts = [labels[:, 1:] != labels[:, :-1], labels[1:, :] != labels[:-1, :],
              labels[1:, 1:] != labels[:-1, :-1], labels[1:, :-1] != labels[:-1, 1:]]
    slices = [(labels[:, :-1], labels[:, 1:]), (labels[:-1, :], labels[1:, :]),
              (labels[:-1, :-1], labels[1:, 1:]), (labels[:-1, 1:], labels[1:, :-1])]
    for mask, (la, lb) in zip(shifts, slices):
        a, b = la[mask], lb[mask]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        pairs.update(zip(lo.tolist(), hi.tolist()))
    return pairs


def init_regions(seg: SegmentationResult, img: np.ndarray) -> list[Region]:
    """One Region per segment, with HSV color and gradient texture histograms."""
    if seg.labels.shape != img.shape[:2]:
        raise ValueError("segmentation and image dimensions disagree")
    labels, n = seg.labels, seg.region_count
    color_hist = _region_histogram(labels, n, _color_bin_index(img), COLOR_BINS)
    texture_hist = _region_histogram(labels, n, _texture_bin_index(img),
                                     TEXTURE_ORIENTATIONS * TEXTURE_MAG_BINS)
    sizes = np.bincount(labels.ravel(), minlength=n)
    rows, cols = np.nonzero(labels >= 0)
    tops = np.full(n, labels.shape[0], dtype=np.int64)
    lefts = np.full(n, labels.shape[1], dtype=np.int64)
    bottoms = np.full(n, -1, dtype=np.int64)
    rights = np.full(n, -1, dtype=np.int64)
    flat = labels.ravel()
    np.minimum.at(tops, flat, rows)
    np.minimum.at(lefts, flat, cols)
    np.maximum.at(bottoms, flat, rows)
    np.maximum.at(rights, flat, cols)

    regions = [
        Region(id=i, size=int(sizes[i]),
               box=BoundingBox(int(tops[i]), int(lefts[i]), int(bottoms[i]), int(rights[i])),
               color_hist=color_hist[i], texture_hist=texture_hist[i])
        for i in range(n)
    ]
    for a, b in _adjacency_pairs(labels):
        regions[a].neighbors.add(b)
        regions[b].neighbors.add(a)
    return regions


def _box_union(a: BoundingBox, b: BoundingBox) -> BoundingBox:
    return BoundingBox(min(a.top, b.top), min(a.left, b.left),
                       max(a.bottom, b.bottom), max(a.right, b.right))


def similarity(a: Region, b: Region, image_area: int) -> float:
    """Sum of color, texture, size, and fill affinities, each in [0, 1]."""
    s_color = float(np.minimum(a.color_hist, b.color_hist).sum())
    s_texture = float(np.minimum(a.texture_hist, b.texture_hist).sum())
    s_size = 1.0 - (a.size + b.size) / image_area
    union = _box_union(a.box, b.box)
    s_fill = 1.0 - (union.area - a.size - b.size) / image_area
    return s_color + s_texture + min(max(s_size, 0.0), 1.0) + min(max(s_fill, 0.0), 1.0)


def merge(a: Region, b: Region, new_id: int) -> Region:
    """Size-weighted histogram average, box union, merged neighbor set."""
    size = a.size + b.size
    return Region(
        id=new_id,
        size=size,
        box=_box_union(a.box, b.box),
        color_hist=(a.color_hist * a.size + b.color_hist * b.size) / size,
        texture_hist=(a.texture_hist * a.size + b.texture_hist * b.size) / size,
        neighbors=(a.neighbors | b.neighbors) - {a.id, b.id},
    )


def hierarchical_group(regions: list[Region], image_area: int) -> list[BoundingBox]:
    """Greedy merge loop; returns the boxes of all 2n-1 regions, pre-dedup.

    Ties on similarity break toward the lexicographically smallest id pair.
    """
    alive = {r.id: r for r in regions}
    boxes = [r.box for r in regions]
    heap: list[tuple[float, int, int]] = []
    for r in regions:
        for nb in sorted(r.neighbors):
            if r.id < nb:
                heapq.heappush(heap, (-similarity(r, alive[nb], image_area), r.id, nb))
    next_id = len(regions)
    while len(alive) > 1:
        neg_sim, ia, ib = heapq.heappop(heap)
        if ia not in alive or ib not in alive:
            continue
        merged = merge(alive[ia], alive[ib], next_id)
        del alive[ia], alive[ib]
        for nb in list(merged.neighbors):
            if nb in alive:
                alive[nb].neighbors.discard(ia)
                alive[nb].neighbors.discard(ib)
                alive[nb].neighbors.add(next_id)
                heapq.heappush(heap, (-similarity(merged, alive[nb], image_area), nb, next_id))
            else:
                merged.neighbors.discard(nb)
        alive[next_id] = merged
        boxes.append(merged.box)
        next_id += 1
    return boxes


def selective_search(img: np.ndarray, p: SegParams, min_box_side: int,
                     image_index: int = 0) -> ProposalSet:
    """Segment, group, filter tiny boxes, deduplicate in first-seen order."""
    seg = felzenszwalb_segment(img, p)
    regions = init_regions(seg, img)
    boxes = hierarchical_group(regions, img.shape[0] * img.shape[1])
    kept: list[BoundingBox] = []
    seen: set[tuple[int, int, int, int]] = set()
    for box in boxes:
        if box.height < min_box_side or box.width < min_box_side:
            continue
        key = (box.top, box.left, box.bottom, box.right)
        if key not in seen:
            seen.add(key)
            kept.append(box)
    return ProposalSet(image_index=image_index, boxes=kept)


def write_proposal_cache(path: Path, sets: list[ProposalSet]) -> None:
    with open(path, "wb") as fh:
        fh.write(PROPOSAL_MAGIC)
        for ps in sets:
            fh.write(struct.pack("<II", ps.image_index, len(ps.boxes)))
            for box in ps.boxes:
                fh.write(struct.pack("<4H", box.top, box.left, box.bottom, box.right))


def read_proposal_cache(path: Path) -> list[ProposalSet]:
    data = Path(path).read_bytes()
    if data[:8] != PROPOSAL_MAGIC:
        raise ValueError(f"{path}: bad proposal cache magic {data[:8]!r}")
    sets: list[ProposalSet] = []
    pos = 8
    while pos < len(data):
        if pos + 8 > len(data):
            raise ValueError(f"{path}: truncated record header at record {len(sets)}")
        image_index, count = struct.unpack_from("<II", data, pos)
        pos += 8
        if pos + 8 * count > len(data):
            raise ValueError(f"{path}: truncated boxes at record {len(sets)}")
        boxes = []
        for _ in range(count):
            t, l, b, r = struct.unpack_from("<4H", data, pos)
            pos += 8
            boxes.append(BoundingBox(t, l, b, r))
        sets.append(ProposalSet(image_index=image_index, boxes=boxes))
    return sets
