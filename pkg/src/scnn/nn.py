"""Minimal CNN engine: conv/pool/FC layers, softmax loss, SGD training.

Two preset architectures are provided, named by their conv channel counts
and hidden FC width: 64-128-256_512 and 92-256-512_1024. Both take 3x32x32
inputs and end in FC(num_classes) + softmax loss.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from math import ceil, sqrt
from pathlib import Path
from typing import Callable, Union

import numpy as np

CHECKPOINT_MAGIC = b"SCNNCKPT"


class NumericError(RuntimeError):
    """Non-finite values encountered during training or loss evaluation."""


# --------------------------------------------------------------------------
# layer specs

@dataclass(frozen=True)
class Conv:
    out_channels: int
    kernel: int = 5
    stride: int = 1
    pad: int = 2


@dataclass(frozen=True)
class ReLU:
    pass


@dataclass(frozen=True)
class MaxPool:
    kernel: int = 3
    stride: int = 2
    pad: int = 0
    ceil_mode: bool = True


@dataclass(frozen=True)
class FullyConnected:
    out_features: int


@dataclass(frozen=True)
class Dropout:
    p: float = 0.5


@dataclass(frozen=True)
class SoftmaxLoss:
    pass


LayerSpec = Union[Conv, ReLU, MaxPool, FullyConnected, Dropout, SoftmaxLoss]


@dataclass(frozen=True)
class NetworkSpec:
    name: str
    layers: tuple[LayerSpec, ...]
    num_classes: int

    def fingerprint(self) -> str:
        text = f"{self.name};C={self.num_classes};" + ";".join(repr(l) for l in self.layers)
        return hashlib.sha256(text.encode()).hexdigest()


def net_small(num_classes: int) -> NetworkSpec:
    return NetworkSpec("64-128-256_512", (
        Conv(64), ReLU(), MaxPool(),
        Conv(128), ReLU(), MaxPool(),
        Conv(256), ReLU(),
        FullyConnected(512), Dropout(0.5),
        FullyConnected(num_classes), SoftmaxLoss(),
    ), num_classes)


def net_large(num_classes: int) -> NetworkSpec:
    return NetworkSpec("92-256-512_1024", (
        Conv(92), ReLU(), MaxPool(),
        Conv(256), ReLU(), MaxPool(),
        Conv(512), ReLU(),
        FullyConnected(1024), Dropout(0.5),
        FullyConnected(num_classes), SoftmaxLoss(),
    ), num_classes)


PRESETS: dict[str, Callable[[int], NetworkSpec]] = {
    "net_small": net_small,
    "net_large": net_large,
    "64-128-256_512": net_small,
    "92-256-512_1024": net_large,
}


# --------------------------------------------------------------------------
# functional ops

def _windows(xp: np.ndarray, kernel: int, stride: int, out_h: int, out_w: int) -> np.ndarray:
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, (n, c, out_h, out_w, kernel, kernel),
        (sn, sc, stride * sh, stride * sw, sh, sw), writeable=False)


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int, pad: int) -> np.ndarray:
    """Cross-correlation plus per-channel bias; x is NCHW, w is OIKK."""
    n, c, h, wid = x.shape
    o, ci, kh, kw = w.shape
    if ci != c or kh != kw:
        raise ValueError(f"kernel {w.shape} incompatible with input {x.shape}")
    out_h = (h + 2 * pad - kh) // stride + 1
    out_w = (wid + 2 * pad - kw) // stride + 1
    if out_h < 1 or out_w < 1:
        raise ValueError(f"kernel {kh} too large for {h}x{wid} input with pad {pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(xp, kh, stride, out_h, out_w)
    y = np.einsum("nchwkl,ockl->nohw", win, w, optimize=True)
    return y + b[None, :, None, None]


def conv2d_backward(x: np.ndarray, w: np.ndarray, grad_out: np.ndarray,
                    stride: int, pad: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    n, c, h, wid = x.shape
    o, _, kh, kw = w.shape
    out_h, out_w = grad_out.shape[2:]
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = _windows(xp, kh, stride, out_h, out_w)
    grad_b = grad_out.sum(axis=(0, 2, 3))
    grad_w = np.einsum("nchwkl,nohw->ockl", win, grad_out, optimize=True)
    grad_xp = np.zeros_like(xp)
    for ki in range(kh):
        for kj in range(kw):
            patch = np.einsum("nohw,oc->nchw", grad_out, w[:, :, ki, kj], optimize=True)
            grad_xp[:, :, ki:ki + stride * out_h:stride,
                    kj:kj + stride * out_w:stride] += patch
    grad_x = grad_xp[:, :, pad:pad + h, pad:pad + wid]
    return grad_x, grad_w, grad_b


def pool_output_dim(in_dim: int, kernel: int, stride: int, pad: int, ceil_mode: bool) -> int:
    span = in_dim + 2 * pad - kernel
    return (ceil(span / stride) if ceil_mode else span // stride) + 1


def maxpool_forward(x: np.ndarray, kernel: int = 3, stride: int = 2, pad: int = 0,
                    ceil_mode: bool = True) -> tuple[np.ndarray, dict]:
    """Per-window max. Windows past the edge are clipped (padded with -inf)."""
    n, c, h, w = x.shape
    out_h = pool_output_dim(h, kernel, stride, pad, ceil_mode)
    out_w = pool_output_dim(w, kernel, stride, pad, ceil_mode)
    full_h = max(h + 2 * pad, (out_h - 1) * stride + kernel)
    full_w = max(w + 2 * pad, (out_w - 1) * stride + kernel)
    xp = np.full((n, c, full_h, full_w), -np.inf, dtype=x.dtype)
    xp[:, :, pad:pad + h, pad:pad + w] = x
    win = _windows(xp, kernel, stride, out_h, out_w).reshape(n, c, out_h, out_w, -1)
    arg = win.argmax(axis=-1)  # first max in row-major window order
    y = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    cache = {"arg": arg, "shape": x.shape, "padded": (full_h, full_w),
             "kernel": kernel, "stride": stride, "pad": pad}
    return y, cache


def maxpool_backward(cache: dict, grad_out: np.ndarray) -> np.ndarray:
    n, c, h, w = cache["shape"]
    full_h, full_w = cache["padded"]
    kernel, stride, pad = cache["kernel"], cache["stride"], cache["pad"]
    arg = cache["arg"]
    out_h, out_w = arg.shape[2:]
    rows = np.arange(out_h)[:, None] * stride + arg // kernel
    cols = np.arange(out_w)[None, :] * stride + arg % kernel
    grad_xp = np.zeros((n, c, full_h, full_w), dtype=grad_out.dtype)
    n_idx = np.arange(n)[:, None, None, None]
    c_idx = np.arange(c)[None, :, None, None]
    np.add.at(grad_xp, (n_idx, c_idx, rows, cols), grad_out)
    return grad_xp[:, :, pad:pad + h, pad:pad + w]


def relu_forward(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0)


def relu_backward(x: np.ndarray, grad_out: np.ndarray) -> np.ndarray:
    return grad_out * (x > 0)  # subgradient at 0 is 0


def fc_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    return x @ w.T + b


def fc_backward(x: np.ndarray, w: np.ndarray,
                grad_out: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    return grad_out @ w, grad_out.T @ x, grad_out.sum(axis=0)


def dropout_forward(x: np.ndarray, p: float, rng: np.random.Generator | None,
                    train: bool) -> tuple[np.ndarray, np.ndarray | None]:
    """Inverted dropout: kept units scaled by 1/(1-p); identity in eval mode."""
    if not train or p == 0.0:
        return x, None
    mask = (rng.random(x.shape) >= p) / (1.0 - p)
    return x * mask.astype(x.dtype), mask


def dropout_backward(mask: np.ndarray | None, grad_out: np.ndarray) -> np.ndarray:
    return grad_out if mask is None else grad_out * mask.astype(grad_out.dtype)


def softmax_loss(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean negative log-likelihood with max-subtraction stabilization."""
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in softmax loss")
    n = len(labels)
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(n), labels]))
    probs = np.exp(shifted - log_z[:, None])
    probs[np.arange(n), labels] -= 1.0
    return loss, probs / n


# --------------------------------------------------------------------------
# network assembly

class _ConvLayer:
    def __init__(self, spec: Conv, in_shape, rng, dtype):
        c, h, w = in_shape
        fan_in = c * spec.kernel * spec.kernel
        bound = 1.0 / sqrt(fan_in)
        self.spec = spec
        self.w = rng.uniform(-bound, bound,
                             (spec.out_channels, c, spec.kernel, spec.kernel)).astype(dtype)
        self.b = np.zeros(spec.out_channels, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self.out_shape = (spec.out_channels,
                          (h + 2 * spec.pad - spec.kernel) // spec.stride + 1,
                          (w + 2 * spec.pad - spec.kernel) // spec.stride + 1)

    def forward(self, x, train, rng):
        self._x = x
        return conv2d_forward(x, self.w, self.b, self.spec.stride, self.spec.pad)

    def backward(self, grad_out):
        gx, self.dw, self.db = conv2d_backward(self._x, self.w, grad_out,
                                               self.spec.stride, self.spec.pad)
        return gx


class _ReLULayer:
    def __init__(self, spec, in_shape, rng, dtype):
        self.spec = spec
        self.out_shape = in_shape

    def forward(self, x, train, rng):
        self._x = x
        return relu_forward(x)

    def backward(self, grad_out):
        return relu_backward(self._x, grad_out)


class _MaxPoolLayer:
    def __init__(self, spec: MaxPool, in_shape, rng, dtype):
        c, h, w = in_shape
        self.spec = spec
        self.out_shape = (c,
                          pool_output_dim(h, spec.kernel, spec.stride, spec.pad, spec.ceil_mode),
                          pool_output_dim(w, spec.kernel, spec.stride, spec.pad, spec.ceil_mode))

    def forward(self, x, train, rng):
        y, self._cache = maxpool_forward(x, self.spec.kernel, self.spec.stride,
                                         self.spec.pad, self.spec.ceil_mode)
        return y

    def backward(self, grad_out):
        return maxpool_backward(self._cache, grad_out)


class _FCLayer:
    def __init__(self, spec: FullyConnected, in_shape, rng, dtype):
        fan_in = int(np.prod(in_shape))
        bound = 1.0 / sqrt(fan_in)
        self.spec = spec
        self.w = rng.uniform(-bound, bound, (spec.out_features, fan_in)).astype(dtype)
        self.b = np.zeros(spec.out_features, dtype=dtype)
        self.dw = np.zeros_like(self.w)
        self.db = np.zeros_like(self.b)
        self.out_shape = (spec.out_features,)

    def forward(self, x, train, rng):
        self._in_shape = x.shape
        self._x = x.reshape(len(x), -1)
        return fc_forward(self._x, self.w, self.b)

    def backward(self, grad_out):
        gx, self.dw, self.db = fc_backward(self._x, self.w, grad_out)
        return gx.reshape(self._in_shape)


class _DropoutLayer:
    def __init__(self, spec: Dropout, in_shape, rng, dtype):
        self.spec = spec
        self.out_shape = in_shape

    def forward(self, x, train, rng):
        y, self._mask = dropout_forward(x, self.spec.p, rng, train)
        return y

    def backward(self, grad_out):
        return dropout_backward(self._mask, grad_out)


_LAYER_CLASSES = {Conv: _ConvLayer, ReLU: _ReLULayer, MaxPool: _MaxPoolLayer,
                  FullyConnected: _FCLayer, Dropout: _DropoutLayer}


class Network:
    """Instantiated layer stack with parameters; input is NCHW float."""

    def __init__(self, spec: NetworkSpec, input_shape=(3, 32, 32),
                 seed: int = 0, dtype=np.float32):
        if not isinstance(spec.layers[-1], SoftmaxLoss):
            raise ValueError("network must end with a softmax loss layer")
        self.spec = spec
        self.input_shape = tuple(input_shape)
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.layers = []
        shape = self.input_shape
        for layer_spec in spec.layers[:-1]:
            layer = _LAYER_CLASSES[type(layer_spec)](layer_spec, shape, rng, dtype)
            self.layers.append(layer)
            shape = layer.out_shape

    def param_layers(self):
        return [l for l in self.layers if isinstance(l, (_ConvLayer, _FCLayer))]

    def forward_logits(self, x: np.ndarray, train: bool = False,
                       rng: np.random.Generator | None = None) -> np.ndarray:
        for layer in self.layers:
            x = layer.forward(x, train, rng)
        return x

    def loss_and_grad(self, x, labels, train=False, rng=None) -> float:
        """Forward + backward; leaves parameter gradients on each layer."""
        logits = self.forward_logits(x, train, rng)
        loss, grad = softmax_loss(logits, labels)
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return loss

    def predict(self, x: np.ndarray) -> np.ndarray:
        return np.argmax(self.forward_logits(x, train=False), axis=1)


@dataclass
class TrainConfig:
    lr: float = 0.01
    lr_decay_factor: float = 0.1
    lr_decay_epoch: int | None = None  # default: two-thirds of the epoch budget
    momentum: float = 0.9
    weight_decay: float = 5e-4
    batch_size: int = 128
    epochs: int = 30
    seed: int = 0

    def __post_init__(self):
        if self.lr <= 0 or not 0 <= self.momentum < 1 or self.batch_size < 1:
            raise ValueError(f"invalid training config: {self}")

    def lr_at(self, epoch: int) -> float:
        decay_at = self.lr_decay_epoch if self.lr_decay_epoch is not None \
            else (2 * self.epochs) // 3
        return self.lr * (self.lr_decay_factor if epoch >= decay_at else 1.0)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    lr: float
    holdout_accuracy: float | None = None


def normalize_images(images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """uint8 NHWC -> float NCHW in [-0.5, 0.5]."""
    return (images.astype(dtype) / 255.0 - 0.5).transpose(0, 3, 1, 2)


def evaluate_accuracy(net: Network, images: np.ndarray, labels: np.ndarray,
                      batch_size: int = 256) -> float:
    correct = 0
    x = normalize_images(images, net.dtype)
    for start in range(0, len(x), batch_size):
        pred = net.predict(x[start:start + batch_size])
        correct += int((pred == labels[start:start + batch_size]).sum())
    return correct / max(1, len(labels))


def train(ds, spec: NetworkSpec, cfg: TrainConfig, holdout=None,
          checkpoint_path: Path | None = None, start_epoch: int = 0,
          net: Network | None = None,
          velocity: list[np.ndarray] | None = None,
          log_fn: Callable[[EpochStats], None] | None = None,
          stop_train_accuracy: float | None = None,
          dtype=np.float32) -> tuple[Network, list[EpochStats]]:
    """Mini-batch SGD with momentum and weight decay over seeded epochs.

    Epoch shuffles and dropout masks are seeded by (cfg.seed, epoch), so a run
    resumed from the epoch-k checkpoint continues bitwise-identically to the
    uninterrupted run. When stop_train_accuracy is set, training stops at the
    first epoch whose full-training-set accuracy reaches it.
    """
    if net is None:
        net = Network(spec, seed=cfg.seed, dtype=dtype)
    if velocity is None:
        velocity = [np.zeros_like(t) for l in net.param_layers() for t in (l.w, l.b)]

    x_all = normalize_images(ds.images, dtype)
    y_all = ds.labels
    stats: list[EpochStats] = []
    for epoch in range(start_epoch, cfg.epochs):
        rng = np.random.default_rng([cfg.seed, epoch])
        order = rng.permutation(len(y_all))
        lr = cfg.lr_at(epoch)
        losses = []
        for batch_index, start in enumerate(range(0, len(order), cfg.batch_size)):
            idx = order[start:start + cfg.batch_size]
            try:
                loss = net.loss_and_grad(x_all[idx], y_all[idx], train=True, rng=rng)
            except NumericError as exc:
                raise NumericError(f"training diverged at epoch {epoch}, "
                                   f"batch {batch_index}: {exc}") from exc
            if not np.isfinite(loss):
                raise NumericError(f"training diverged at epoch {epoch}, batch {batch_index}")
            losses.append(loss)
            vi = 0
            for layer in net.param_layers():
                for tensor, grad in ((layer.w, layer.dw), (layer.b, layer.db)):
                    wd = cfg.weight_decay if tensor.ndim > 1 else 0.0
                    velocity[vi] *= cfg.momentum
                    velocity[vi] -= lr * (grad + wd * tensor)
                    tensor += velocity[vi]
                    vi += 1
        entry = EpochStats(epoch=epoch, mean_loss=float(np.mean(losses)), lr=lr)
        if holdout is not None and len(holdout) > 0:
            entry.holdout_accuracy = evaluate_accuracy(net, holdout.images, holdout.labels)
        stats.append(entry)
        if log_fn is not None:
            log_fn(entry)
        if checkpoint_path is not None:
            save_checkpoint(checkpoint_path, net, epoch + 1, velocity)
        if stop_train_accuracy is not None:
            if evaluate_accuracy(net, ds.images, ds.labels) >= stop_train_accuracy:
                break
    return net, stats


# --------------------------------------------------------------------------
# checkpoints

def save_checkpoint(path: Path, net: Network, epoch: int,
                    velocity: list[np.ndarray]) -> None:
    fp = net.spec.fingerprint().encode()
    buffers = []
    for layer in net.param_layers():
        buffers.extend([layer.w, layer.b])
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", len(fp)))
        fh.write(fp)
        fh.write(struct.pack("<II", epoch, len(buffers)))
        for buf in buffers:
            fh.write(buf.astype("<f4").tobytes())
        for buf in velocity:
            fh.write(buf.astype("<f4").tobytes())


def load_checkpoint(path: Path, spec: NetworkSpec,
                    input_shape=(3, 32, 32)) -> tuple[Network, int, list[np.ndarray]]:
    data = Path(path).read_bytes()
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: bad checkpoint magic {data[:8]!r}")
    fp_len, = struct.unpack_from("<I", data, 8)
    fp = data[12:12 + fp_len].decode()
    if fp != spec.fingerprint():
        raise ValueError(f"{path}: checkpoint fingerprint {fp[:12]}... does not match "
                         f"network {spec.name} (C={spec.num_classes})")
    pos = 12 + fp_len
    epoch, n_buffers = struct.unpack_from("<II", data, pos)
    pos += 8
    net = Network(spec, input_shape=input_shape, seed=0, dtype=np.float32)
    buffers = []
    for layer in net.param_layers():
        buffers.extend([layer.w, layer.b])
    if len(buffers) != n_buffers:
        raise ValueError(f"{path}: expected {len(buffers)} buffers, found {n_buffers}")
    velocity = []
    for buf in buffers:
        vals = np.frombuffer(data, dtype="<f4", count=buf.size, offset=pos)
        buf[...] = vals.reshape(buf.shape)
        pos += 4 * buf.size
    for buf in buffers:
        vals = np.frombuffer(data, dtype="<f4", count=buf.size, offset=pos)
        velocity.append(vals.reshape(buf.shape).copy())
        pos += 4 * buf.size
    if pos != len(data):
        raise ValueError(f"{path}: {len(data) - pos} trailing bytes")
    return net, epoch, velocity


# --------------------------------------------------------------------------
# verification

def gradient_check(spec: NetworkSpec, seed: int = 0, eps: float = 1e-5,
                   input_shape=(3, 8, 8), batch: int = 2,
                   samples_per_tensor: int = 64) -> float:
    """Central finite differences vs analytic gradients at 64 bits.

    Checks every bias entry and a seeded sample of entries of each weight
    tensor (exhaustive checking of the preset networks would take hours).
    Dropout runs in eval mode so the loss is deterministic. Samples whose
    +-eps perturbation flips a ReLU sign or a pool argmax are skipped: the
    loss is piecewise-smooth and central differences across such a kink do
    not estimate the one-sided derivative backprop reports.
    """
    rng = np.random.default_rng(seed)
    net = Network(spec, input_shape=input_shape, seed=seed, dtype=np.float64)
    x = rng.normal(0, 0.5, (batch, *input_shape))
    labels = rng.integers(0, spec.num_classes, batch)

    net.loss_and_grad(x, labels, train=False)
    analytic = [(layer, name, getattr(layer, "d" + name).copy())
                for layer in net.param_layers() for name in ("w", "b")]

    def loss_at() -> tuple[float, list[np.ndarray]]:
        logits = net.forward_logits(x, train=False)
        pattern = []
        for layer in net.layers:
            if isinstance(layer, _ReLULayer):
                pattern.append(layer._x > 0)
            elif isinstance(layer, _MaxPoolLayer):
                pattern.append(layer._cache["arg"].copy())
        return softmax_loss(logits, labels)[0], pattern

    _, base_pattern = loss_at()
    max_err = 0.0
    for layer, name, grad in analytic:
        tensor = getattr(layer, name)
        flat = tensor.reshape(-1)
        if flat.size <= samples_per_tensor:
            indices = np.arange(flat.size)
        else:
            indices = rng.choice(flat.size, size=samples_per_tensor, replace=False)
        for i in indices:
            orig = flat[i]
            flat[i] = orig + eps
            plus, pat_plus = loss_at()
            flat[i] = orig - eps
            minus, pat_minus = loss_at()
            flat[i] = orig
            if any(not np.array_equal(p, b) or not np.array_equal(m, b)
                   for p, m, b in zip(pat_plus, pat_minus, base_pattern)):
                continue
            numeric = (plus - minus) / (2 * eps)
            a = grad.reshape(-1)[i]
            err = abs(a - numeric) / max(1e-6, abs(a) + abs(numeric))
            max_err = max(max_err, err)
    return max_err
