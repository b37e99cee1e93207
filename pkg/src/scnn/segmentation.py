"""Graph-based image oversegmentation (the superpixel stage).

Builds an 8-connected pixel graph weighted by RGB distance and merges
components whose joining edge is no heavier than both sides' internal
variation plus a size-scaled slack k/|component|.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import ceil, exp
from pathlib import Path

import numpy as np
from scipy.ndimage import correlate1d


@dataclass(frozen=True)
class SegParams:
    sigma: float = 0.8
    k: float = 200.0
    min_size: int = 50

    def __post_init__(self):
        if self.sigma < 0 or self.k <= 0 or self.min_size < 1:
            raise ValueError(f"invalid segmentation params: {self}")


@dataclass
class SegmentationResult:
    labels: np.ndarray  # (H, W) int32 region ids, dense from 0
    region_count: int


class DisjointSet:
    """Union-find over pixel indices with union by rank and size tracking."""

    def __init__(self, n: int):
        self.parent = np.arange(n, dtype=np.int64)
        self.rank = np.zeros(n, dtype=np.int32)
        self.size = np.ones(n, dtype=np.int64)

    def find(self, x: int) -> int:
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:  # path compression
            parent[x], x = root, parent[x]
        return root

    def union(self, a: int, b: int) -> int:
        if self.rank[a] < self.rank[b]:
            a, b = b, a
        self.parent[b] = a
        if self.rank[a] == self.rank[b]:
            self.rank[a] += 1
        self.size[a] += self.size[b]
        return a


def gaussian_kernel(sigma: float) -> np.ndarray:
    radius = int(ceil(3.0 * sigma))
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.array([exp(-0.5 * (t / sigma) ** 2) for t in x]) if sigma > 0 else np.ones(1)
    return k / k.sum()


def gaussian_smooth(img: np.ndarray, sigma: float) -> np.ndarray:
    """Separable Gaussian blur per channel; edges clamp. sigma=0 is a float cast."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    out = img.astype(np.float64)
    if sigma == 0:
        return out
    kernel = gaussian_kernel(sigma)
    out = correlate1d(out, kernel, axis=0, mode="nearest")
    out = correlate1d(out, kernel, axis=1, mode="nearest")
    return out


def build_grid_graph(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """8-connected pixel graph; weight = Euclidean RGB distance.

    Returns (a, b, w) arrays; edge count is 4HW - 3H - 3W + 2. Edge order is
    fixed (right, down, down-right, down-left blocks) so ties are stable.
    """
    h, w = img.shape[:2]
    idx = np.arange(h * w).reshape(h, w)
    flat = img.astype(np.float64).reshape(h * w, -1)

    def dist(pa, pb):
        d = flat[pa] - flat[pb]
        return np.sqrt((d ** 2).sum(axis=-1))

    pairs = [
        (idx[:, :-1].ravel(), idx[:, 1:].ravel()),      # right
        (idx[:-1, :].ravel(), idx[1:, :].ravel()),      # down
        (idx[:-1, :-1].ravel(), idx[1:, 1:].ravel()),   # down-right
        (idx[:-1, 1:].ravel(), idx[1:, :-1].ravel()),   # down-left
    ]
    a = np.concatenate([p for p, _ in pairs])
    b = np.concatenate([q for _, q in pairs])
    return a, b, dist(a, b)


def felzenszwalb_segment(img: np.ndarray, p: SegParams) -> SegmentationResult:
    """Segment an RGB image into superpixels.

    Edges are processed in nondecreasing weight order (ties by edge index);
    components merge when the edge weight is <= both sides' internal
    threshold. A post-pass merges regions below min_size into their
    lowest-weight neighbor. Labels are dense, in first-pixel order.
    """
    smooth = gaussian_smooth(img, p.sigma)
    a, b, w = build_grid_graph(smooth)
    order = np.argsort(w, kind="stable")
    a, b, w = a[order], b[order], w[order]

    h, wid = img.shape[:2]
    n = h * wid
    ds = DisjointSet(n)
    threshold = np.full(n, p.k, dtype=np.float64)  # Int(single pixel) = 0, slack k/1
    for i in range(len(w)):
        ra, rb = ds.find(a[i]), ds.find(b[i])
        if ra != rb and w[i] <= threshold[ra] and w[i] <= threshold[rb]:
            root = ds.union(ra, rb)
            threshold[root] = w[i] + p.k / ds.size[root]

    # merge undersized components with their lowest-weight neighbor
    for i in range(len(w)):
        ra, rb = ds.find(a[i]), ds.find(b[i])
        if ra != rb and (ds.size[ra] < p.min_size or ds.size[rb] < p.min_size):
            ds.union(ra, rb)

    roots = np.array([ds.find(i) for i in range(n)], dtype=np.int64)
    _, first_index, inverse = np.unique(roots, return_index=True, return_inverse=True)
    remap = np.empty(len(first_index), dtype=np.int32)
    remap[np.argsort(first_index, kind="stable")] = np.arange(len(first_index))
    labels = remap[inverse].reshape(h, wid).astype(np.int32)
    return SegmentationResult(labels=labels, region_count=len(first_index))


def write_label_pgm(seg: SegmentationResult, path: Path) -> None:
    """Debug dump: label map as a binary P5 graymap, ids scaled to 0..255."""
    h, w = seg.labels.shape
    scale = 255 // max(1, seg.region_count - 1) if seg.region_count > 1 else 0
    gray = (seg.labels * scale).clip(0, 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n255\n".encode())
        fh.write(gray.tobytes())
