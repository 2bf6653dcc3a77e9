"""Deterministic numpy core: forward passes, dense backprop, SGD, MNWB weights files.

Tensors are plain float64 ``numpy.ndarray`` objects.  Parameter order is fixed by
the architecture: every conv layer contributes ``(filters, bias)`` with filters
shaped ``(num_filters, in_channels, f, f)``, then every dense layer
contributes ``(W, b)`` with ``W`` shaped ``(in, out)``.  Conv activations are
held as NCHW internally; callers pass images as NHWC (``input_shape`` order).
"""
from __future__ import annotations

import csv
import io
import json
import os
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .archspec import NetworkArch
from .errors import ConvTrainingUnsupported, NonFiniteValue, ShapeMismatch, ValidationError, WeightsFormatError

MAGIC = b"MNWB"
FORMAT_VERSION = 1


@dataclass(frozen=True, eq=False)
class WeightedNetwork:
    arch: NetworkArch
    weights: tuple
    rng_seed: int = 0
    # One bool mask per tensor, True where the scalar was introduced by hatching.
    provenance: Optional[tuple] = None
    # HatchPlan that produced this network, if hatched.
    plan: object = None

    def __post_init__(self):
        object.__setattr__(self, "weights", tuple(np.asarray(w, dtype=np.float64) for w in self.weights))
        expected = param_shapes(self.arch)
        got = [w.shape for w in self.weights]
        if got != expected:
            raise ShapeMismatch(f"weight shapes {got} do not match architecture {expected}")
        if self.provenance is not None:
            prov = tuple(np.asarray(p, dtype=bool) for p in self.provenance)
            if [p.shape for p in prov] != expected:
                raise ShapeMismatch("provenance masks must match weight shapes")
            object.__setattr__(self, "provenance", prov)

    @property
    def num_params(self) -> int:
        return int(sum(w.size for w in self.weights))

    def with_weights(self, weights, **changes) -> "WeightedNetwork":
        return replace(self, weights=tuple(weights), **changes)


@dataclass(frozen=True, eq=False)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    # Per-example shape for image data (H, W, C); None for flat features.
    sample_shape: Optional[tuple] = None

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if feats.shape[0] != labels.shape[0] or labels.size < 1:
            raise ValidationError("dataset needs n >= 1 rows with one label each")
        if labels.min() < 0 or labels.max() >= self.num_classes:
            raise ValidationError("labels must lie in [0, num_classes)")
        if not np.all(np.isfinite(feats)):
            raise NonFiniteValue("dataset features contain NaN or Inf")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self):
        return self.labels.size

    def take(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.labels[idx], self.num_classes, self.sample_shape)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 0.1
    max_epochs: int = 200
    patience: int = 15
    shuffle_seed: int = 0

    def __post_init__(self):
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ValidationError("batch_size, max_epochs and patience must be positive")
        if not self.learning_rate >= 0:
            raise ValidationError("learning_rate must be >= 0")

    def to_dict(self) -> dict:
        return dict(batch_size=self.batch_size, learning_rate=self.learning_rate,
                    max_epochs=self.max_epochs, patience=self.patience, shuffle_seed=self.shuffle_seed)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**{k: d[k] for k in ("batch_size", "learning_rate", "max_epochs", "patience",
                                        "shuffle_seed") if k in d})


@dataclass
class TrainLog:
    losses: list = field(default_factory=list)
    accuracies: list = field(default_factory=list)

    @property
    def epochs(self) -> int:
        return len(self.losses)

    def to_dict(self) -> dict:
        return {"epochs": self.epochs, "losses": list(self.losses), "accuracies": list(self.accuracies)}

    @classmethod
    def from_dict(cls, d: dict) -> "TrainLog":
        return cls(list(d["losses"]), list(d["accuracies"]))


# -- shapes and init ------------------------------------------------------------

def param_shapes(arch: NetworkArch) -> list:
    shapes = []
    if arch.kind == "conv":
        c = arch.input_shape[2]
        for _, _, layer in arch.conv_layers():
            shapes += [(layer.num_filters, c, layer.filter_size, layer.filter_size), (layer.num_filters,)]
            c = layer.num_filters
    width = arch.dense_input_width
    for layer in arch.dense_layers:
        shapes += [(width, layer.units), (layer.units,)]
        width = layer.units
    return shapes


def n_conv_layers(arch: NetworkArch) -> int:
    return len(arch.conv_layers()) if arch.kind == "conv" else 0


def init_network(arch: NetworkArch, seed: int, scaled: bool = True) -> WeightedNetwork:
    """Standard-normal weights (divided by sqrt(fan_in) when ``scaled``), zero biases."""
    rng = np.random.default_rng(seed)
    weights = []
    for shape in param_shapes(arch):
        if len(shape) == 1:
            weights.append(np.zeros(shape))
            continue
        fan_in = shape[0] if len(shape) == 2 else int(np.prod(shape[1:]))
        w = rng.standard_normal(shape)
        weights.append(w / np.sqrt(fan_in) if scaled else w)
    return WeightedNetwork(arch, weights, rng_seed=seed)


# -- forward --------------------------------------------------------------------

def _check_finite(a: np.ndarray, where: str) -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteValue(f"non-finite values after {where}")
    return a


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _act(name: str, z: np.ndarray) -> np.ndarray:
    return np.maximum(z, 0.0) if name == "relu" else z


def conv2d(x: np.ndarray, filters: np.ndarray, bias: np.ndarray, padding: int = 0) -> np.ndarray:
    """Stride-1 valid convolution (cross-correlation) of NCHW ``x`` after zero padding."""
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    f = filters.shape[-1]
    windows = sliding_window_view(x, (f, f), axis=(2, 3))  # N, C, H', W', f, f
    out = np.einsum("nchwij,kcij->nkhw", windows, filters, optimize=True)
    return out + bias[None, :, None, None]


def max_pool(x: np.ndarray) -> np.ndarray:
    """2x2 max-pool with stride 2; a trailing odd row/column is dropped."""
    n, c, h, w = x.shape
    x = x[:, :, : h - h % 2, : w - w % 2]
    return x.reshape(n, c, h // 2, 2, w // 2, 2).max(axis=(3, 5))


def _prepare_input(arch: NetworkArch, x) -> tuple:
    x = np.asarray(x, dtype=np.float64)
    if arch.kind == "dense":
        single = x.ndim == 1
        x = x[None, :] if single else x
        if x.ndim != 2 or x.shape[1] != arch.input_shape:
            raise ShapeMismatch(f"expected inputs with {arch.input_shape} features, got {x.shape}")
        return x, single
    h, w, c = arch.input_shape
    if x.ndim == 3 or (x.ndim == 1 and x.size == h * w * c):
        x, single = x.reshape(1, h, w, c), True
    elif x.ndim == 2 and x.shape[1] == h * w * c:
        x, single = x.reshape(-1, h, w, c), False
    else:
        single = False
    if x.ndim != 4 or x.shape[1:] != (h, w, c):
        raise ShapeMismatch(f"expected images shaped {arch.input_shape}, got {x.shape}")
    return np.ascontiguousarray(x.transpose(0, 3, 1, 2)), single


def conv_features(net: WeightedNetwork, x: np.ndarray) -> np.ndarray:
    """Run the conv stack on NCHW input and flatten to (N, C*H*W)."""
    k = 0
    for block in net.arch.conv_blocks:
        for layer in block.layers:
            x = np.maximum(conv2d(x, net.weights[k], net.weights[k + 1], layer.padding), 0.0)
            k += 2
        if block.followed_by_pool:
            x = max_pool(x)
    return _check_finite(x.reshape(x.shape[0], -1), "conv stack")


def _dense_forward(arch: NetworkArch, weights, h: np.ndarray, cache: Optional[list] = None) -> np.ndarray:
    n = len(arch.dense_layers)
    for j, (layer, res) in enumerate(zip(arch.dense_layers, arch.residual)):
        W, b = weights[2 * j], weights[2 * j + 1]
        z = h @ W + b
        if cache is not None:
            cache.append((h, z))
        if j == n - 1:
            return _check_finite(z, "output layer")
        a = _act(layer.activation, z)
        h = h + a if res else a
    raise AssertionError("unreachable")


def logits(net: WeightedNetwork, x) -> np.ndarray:
    x, single = _prepare_input(net.arch, x)
    k = 2 * n_conv_layers(net.arch)
    if net.arch.kind == "conv":
        x = conv_features(net, x)
    z = _dense_forward(net.arch, net.weights[k:], x)
    return z[0] if single else z


def forward(net: WeightedNetwork, x) -> np.ndarray:
    """Class probabilities for a single example or a batch."""
    return _check_finite(softmax(logits(net, x)), "softmax")


# -- loss and gradients ---------------------------------------------------------------

def _log_softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def cross_entropy(net: WeightedNetwork, x, y) -> float:
    z = np.atleast_2d(logits(net, x))
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    return float(-_log_softmax(z)[np.arange(y.size), y].mean())


def dense_backward(arch: NetworkArch, weights, cache: list, dz_out: np.ndarray) -> list:
    """Backprop through the dense chain given d(loss)/d(logits)."""
    grads = [None] * (2 * len(arch.dense_layers))
    dh = None
    for j in range(len(arch.dense_layers) - 1, -1, -1):
        h_in, z = cache[j]
        if j == len(arch.dense_layers) - 1:
            dz = dz_out
        else:
            layer = arch.dense_layers[j]
            dz = dh * (z > 0) if layer.activation == "relu" else dh
        grads[2 * j] = h_in.T @ dz
        grads[2 * j + 1] = dz.sum(axis=0)
        dh_in = dz @ weights[2 * j].T
        if arch.residual[j]:
            dh_in = dh_in + dh
        dh = dh_in
    return grads


def gradients(net: WeightedNetwork, x, y) -> list:
    """Gradient of the mean cross-entropy over the batch for every parameter tensor."""
    if net.arch.kind != "dense":
        raise ConvTrainingUnsupported("gradients are only available for dense networks")
    x, _ = _prepare_input(net.arch, x)
    y = np.asarray(y, dtype=np.int64).reshape(-1)
    cache = []
    z = _dense_forward(net.arch, net.weights, x, cache)
    dz = softmax(z)
    dz[np.arange(y.size), y] -= 1.0
    dz /= y.size
    return dense_backward(net.arch, net.weights, cache, dz)


def evaluate(net: WeightedNetwork, data: Dataset) -> float:
    pred = np.argmax(forward(net, data.features), axis=-1)
    return float(np.mean(pred == data.labels))


def predict(net: WeightedNetwork, x) -> np.ndarray:
    return np.argmax(forward(net, x), axis=-1)


def train(net: WeightedNetwork, data: Dataset, cfg: TrainConfig) -> tuple:
    """Mini-batch SGD on cross-entropy with per-epoch shuffling and accuracy patience.

    Training stops once train accuracy has not exceeded its best value for
    ``cfg.patience`` consecutive epochs, or after ``cfg.max_epochs``.
    """
    if net.arch.kind != "dense":
        raise ConvTrainingUnsupported("training is only supported for dense networks")
    rng = np.random.default_rng(cfg.shuffle_seed)
    weights = [w.copy() for w in net.weights]
    log = TrainLog()
    best, stale = -1.0, 0
    n = len(data)
    for _ in range(cfg.max_epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            grads = gradients(WeightedNetwork(net.arch, weights), data.features[idx], data.labels[idx])
            if cfg.learning_rate:
                for w, g in zip(weights, grads):
                    w -= cfg.learning_rate * g
            for w in weights:
                _check_finite(w, "SGD step")
        current = WeightedNetwork(net.arch, weights)
        log.losses.append(cross_entropy(current, data.features, data.labels))
        acc = evaluate(current, data)
        log.accuracies.append(acc)
        if acc > best:
            best, stale = acc, 0
        else:
            stale += 1
            if stale >= cfg.patience:
                break
    return net.with_weights(weights), log


# -- MNWB weights container -----------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def encode_weights(net: WeightedNetwork, extra: Optional[dict] = None) -> bytes:
    tensors = [("param", w) for w in net.weights]
    if net.provenance is not None:
        tensors += [("introduced", p.astype(np.float64)) for p in net.provenance]
    meta = {"arch": net.arch.to_dict(), "rng_seed": int(net.rng_seed),
            "tensors": [{"role": role, "shape": list(t.shape)} for role, t in tensors]}
    if net.plan is not None:
        meta["plan"] = net.plan.to_dict()
    if extra:
        meta["extra"] = extra
    blob = _dumps(meta).encode()
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<B", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(blob)))
    buf.write(blob)
    for _, t in tensors:
        buf.write(np.ascontiguousarray(t, dtype="<f8").tobytes())
    return buf.getvalue()


def decode_weights(data: bytes) -> tuple:
    """Return (WeightedNetwork, metadata dict)."""
    if data[:4] != MAGIC:
        raise WeightsFormatError("not an MNWB weights file")
    version = data[4]
    if version != FORMAT_VERSION:
        raise WeightsFormatError(f"unsupported MNWB version {version}")
    (length,) = struct.unpack("<I", data[5:9])
    meta = json.loads(data[9:9 + length].decode())
    offset = 9 + length
    params, masks = [], []
    for entry in meta["tensors"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        t = np.frombuffer(data, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
        (params if entry["role"] == "param" else masks).append(t)
    if offset != len(data):
        raise WeightsFormatError("trailing bytes after the declared tensors")
    plan = None
    if "plan" in meta:
        from .transforms import HatchPlan
        plan = HatchPlan.from_dict(meta["plan"])
    net = WeightedNetwork(NetworkArch.from_dict(meta["arch"]), params, meta.get("rng_seed", 0),
                          tuple(m > 0.5 for m in masks) if masks else None, plan)
    return net, meta


def atomic_write(path, data) -> None:
    """Write ``data`` (bytes or str) via a temp file and rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(f".{path.name}.tmp{os.getpid()}")
    with open(tmp, "wb") as fh:
        fh.write(data.encode() if isinstance(data, str) else data)
    os.replace(tmp, path)


def save_weights(net: WeightedNetwork, path, extra: Optional[dict] = None) -> None:
    atomic_write(path, encode_weights(net, extra))


def load_weights(path) -> WeightedNetwork:
    with open(path, "rb") as fh:
        return decode_weights(fh.read())[0]


# -- CSV datasets ------------------------------------------------------------------

def _sidecar(path) -> Path:
    return Path(str(path) + ".json")


def save_dataset(data: Dataset, path) -> None:
    buf = io.StringIO()
    nfeat = int(np.prod(data.features.shape[1:]))
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["label"] + [f"x{i}" for i in range(nfeat)])
    flat = data.features.reshape(len(data), -1)
    for label, row in zip(data.labels, flat):
        writer.writerow([int(label)] + [repr(float(v)) for v in row])
    atomic_write(path, buf.getvalue())
    side = {"num_classes": data.num_classes}
    if data.sample_shape is not None:
        side["shape"] = list(data.sample_shape)
    atomic_write(_sidecar(path), _dumps(side))


def load_dataset(path, num_classes: Optional[int] = None) -> Dataset:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or "label" not in rows[0]:
        raise ValidationError(f"{path}: CSV needs a header with a 'label' column")
    header = rows[0]
    li = header.index("label")
    body = [r for r in rows[1:] if r]
    try:
        labels = np.array([int(r[li]) for r in body], dtype=np.int64)
        feats = np.array([[float(v) for k, v in enumerate(r) if k != li] for r in body], dtype=np.float64)
    except ValueError as exc:
        raise ValidationError(f"{path}: malformed CSV value ({exc})") from exc
    shape = None
    side = _sidecar(path)
    if side.exists():
        meta = json.loads(side.read_text())
        num_classes = num_classes or meta.get("num_classes")
        if "shape" in meta:
            shape = tuple(meta["shape"])
            feats = feats.reshape((len(body),) + shape)
    if not body:
        raise ValidationError(f"{path}: dataset has no rows")
    return Dataset(feats, labels, int(num_classes or labels.max() + 1), shape)
