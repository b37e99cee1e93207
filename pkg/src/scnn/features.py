"""Transfer features: last-conv activations with 4-quadrant max-pooling.

Each feature map is split into four spatial blocks and reduced to one max per
block, so a K-channel map stack yields a 4K-dimensional vector laid out
quadrant-major (TL, TR, BL, BR), channel-minor.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .datasets import resize_bilinear
from .nn import Network, _ConvLayer, _ReLULayer, normalize_images

FEATURE_MAGIC = b"SCNNFEA1"


def _last_conv_cutoff(net: Network) -> int:
    """Index one past the ReLU that follows the last conv layer."""
    last_conv = max(i for i, l in enumerate(net.layers) if isinstance(l, _ConvLayer))
    cutoff = last_conv + 1
    if cutoff < len(net.layers) and isinstance(net.layers[cutoff], _ReLULayer):
        cutoff += 1
    return cutoff


def forward_to_last_conv(net: Network, batch: np.ndarray) -> np.ndarray:
    """Activations after the last conv stage's ReLU; batch is normalized NCHW."""
    if batch.shape[1:] != net.input_shape:
        raise ValueError(f"expected input shape {net.input_shape}, got {batch.shape[1:]}")
    x = batch
    for layer in net.layers[:_last_conv_cutoff(net)]:
        x = layer.forward(x, train=False, rng=None)
    return x


def quadrant_max_pool(maps: np.ndarray) -> np.ndarray:
    """(N, K, H, W) -> (N, 4K); quadrants split at floor(H/2), floor(W/2)."""
    n, k, h, w = maps.shape
    if h < 2 or w < 2:
        raise ValueError(f"maps too small to quarter: {h}x{w}")
    mr, mc = h // 2, w // 2
    blocks = [maps[:, :, :mr, :mc], maps[:, :, :mr, mc:],
              maps[:, :, mr:, :mc], maps[:, :, mr:, mc:]]
    return np.concatenate([blk.max(axis=(2, 3)) for blk in blocks], axis=1)


def feature_dim(net: Network) -> int:
    cutoff = _last_conv_cutoff(net)
    return 4 * net.layers[cutoff - 1].out_shape[0]


def extract_features(net: Network, images, batch_size: int = 256) -> np.ndarray:
    """Resize each image to the network input size, forward, quadrant-pool."""
    side = net.input_shape[1]
    resized = [img if img.shape[:2] == (side, side) else resize_bilinear(img, side, side)
               for img in images]
    if not resized:
        return np.zeros((0, feature_dim(net)), dtype=np.float32)
    x = normalize_images(np.stack(resized), net.dtype)
    rows = []
    for start in range(0, len(x), batch_size):
        maps = forward_to_last_conv(net, x[start:start + batch_size])
        rows.append(quadrant_max_pool(maps))
    return np.concatenate(rows).astype(np.float32)


def write_feature_matrix(path: Path, matrix: np.ndarray) -> None:
    rows, cols = matrix.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(struct.pack("<II", rows, cols))
        fh.write(matrix.astype("<f4").tobytes())


def read_feature_matrix(path: Path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:8] != FEATURE_MAGIC:
        raise ValueError(f"{path}: bad feature file magic {data[:8]!r}")
    rows, cols = struct.unpack_from("<II", data, 8)
    if len(data) != 16 + 4 * rows * cols:
        raise ValueError(f"{path}: expected {16 + 4 * rows * cols} bytes, got {len(data)}")
    return np.frombuffer(data, dtype="<f4", offset=16).reshape(rows, cols).copy()
