"""Datasets: MNIST IDX files, synthetic Gaussian mixtures, long-tailed
subsampling, minibatching and a lossless CSV format.

CSV layout: header ``label,f0,f1,...`` then one row per sample, features
written with 17 significant digits so float64 values round-trip exactly.
"""

import csv
import gzip
import hashlib
import json
import math
import struct
from dataclasses import dataclass

import numpy as np

from .rng import Rng

IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX file. ``field`` names the offending header field."""

    def __init__(self, field, message):
        super().__init__(message)
        self.field = field


@dataclass
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int
    source: str = ""

    def __post_init__(self):
        self.features = np.atleast_2d(np.asarray(self.features, dtype=np.float64))
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.labels) < 1:
            raise ValueError("dataset is empty")
        if len(self.features) != len(self.labels):
            raise ValueError("features and labels differ in length")
        if self.labels.min() < 0 or self.labels.max() >= self.num_classes:
            raise ValueError("labels must lie in [0, num_classes)")
        if not np.all(np.isfinite(self.features)):
            raise ValueError("features must be finite")

    def __len__(self):
        return len(self.labels)

    @property
    def dim(self):
        return self.features.shape[1]

    def class_counts(self):
        return np.bincount(self.labels, minlength=self.num_classes)


def _open(path):
    path = str(path)
    return gzip.open(path, "rb") if path.endswith(".gz") else open(path, "rb")


def _read_idx(path, magic, what):
    with _open(path) as f:
        raw = f.read()
    if len(raw) < 8:
        raise IdxFormatError("header", f"truncated {what} header in {path}")
    (got,) = struct.unpack_from(">I", raw, 0)
    if got != magic:
        raise IdxFormatError("magic", f"wrong magic for {what}: 0x{got:08X}, expected 0x{magic:08X}")
    ndim = magic & 0xFF
    if len(raw) < 4 + 4 * ndim:
        raise IdxFormatError("header", f"truncated {what} header in {path}")
    dims = struct.unpack_from(f">{ndim}I", raw, 4)
    body = raw[4 + 4 * ndim:]
    need = int(np.prod(dims))
    if len(body) < need:
        raise IdxFormatError("payload", f"truncated {what} payload: {len(body)} bytes, expected {need}")
    if len(body) > need:
        raise IdxFormatError("payload", f"trailing bytes in {what} payload: {len(body)} bytes, expected {need}")
    return np.frombuffer(body, dtype=np.uint8).reshape(dims)


def load_mnist_idx(images_path, labels_path, num_classes=10) -> Dataset:
    images = _read_idx(images_path, IMAGES_MAGIC, "images")
    labels = _read_idx(labels_path, LABELS_MAGIC, "labels")
    if images.shape[0] != labels.shape[0]:
        raise IdxFormatError("count", f"count mismatch: {images.shape[0]} images vs {labels.shape[0]} labels")
    if labels.size and labels.max() >= num_classes:
        raise IdxFormatError("labels", f"label {labels.max()} outside [0, {num_classes})")
    features = images.reshape(len(images), -1).astype(np.float64) / 255.0
    return Dataset(features, labels.astype(np.int64), num_classes, source=f"idx:{images_path}")


def write_idx(path, array):
    """Write a uint8 array as IDX (magic 0x0800 | ndim). Gzips if path ends in .gz."""
    a = np.asarray(array, dtype=np.uint8)
    head = struct.pack(">I", 0x0800 | a.ndim) + struct.pack(f">{a.ndim}I", *a.shape)
    data = head + a.tobytes()
    if str(path).endswith(".gz"):
        with gzip.GzipFile(path, "wb", mtime=0) as f:
            f.write(data)
    else:
        with open(path, "wb") as f:
            f.write(data)


@dataclass
class GaussianClass:
    mean: list
    var: list
    count: int

    def __post_init__(self):
        self.mean = [float(v) for v in np.atleast_1d(self.mean)]
        self.var = [float(v) for v in np.atleast_1d(self.var)]
        if len(self.mean) != len(self.var):
            raise ValueError("mean and var lengths differ")
        if any(v <= 0 for v in self.var):
            raise ValueError("variances must be positive")
        if int(self.count) < 1:
            raise ValueError("count must be >= 1")
        self.count = int(self.count)


@dataclass
class GmmSpec:
    classes: list
    seed: int = 0

    def __post_init__(self):
        self.classes = [c if isinstance(c, GaussianClass) else GaussianClass(**c) for c in self.classes]
        if len(self.classes) < 1:
            raise ValueError("need at least one class")
        if len({len(c.mean) for c in self.classes}) != 1:
            raise ValueError("all classes must share one dimension")

    def digest(self):
        payload = {"classes": [c.__dict__ for c in self.classes], "seed": self.seed}
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


def gen_gmm(spec: GmmSpec, num_classes=None) -> Dataset:
    """Classes in spec order; one normal block per class, drawn in that order."""
    rng = Rng(spec.seed)
    feats, labels = [], []
    for k, c in enumerate(spec.classes):
        z = rng.normal(c.count * len(c.mean)).reshape(c.count, -1)
        feats.append(np.asarray(c.mean) + np.sqrt(c.var) * z)
        labels.append(np.full(c.count, k))
    return Dataset(np.concatenate(feats), np.concatenate(labels),
                   num_classes or len(spec.classes), source=f"gmm:{spec.digest()}")


@dataclass
class LongTailSpec:
    ratio: float
    seed: int = 0
    permute_classes: bool = False

    def __post_init__(self):
        if not self.ratio > 1:
            raise ValueError("imbalance ratio must be > 1")


def longtail_counts(n0, num_classes, ratio):
    """``round(n0 * ratio ** (-k / (K - 1)))`` with halves rounded up."""
    if num_classes == 1:
        return [int(n0)]
    return [int(math.floor(n0 * ratio ** (-k / (num_classes - 1)) + 0.5)) for k in range(num_classes)]


def longtail_subsample(dataset: Dataset, spec: LongTailSpec) -> Dataset:
    """Exponential profile anchored at the source count of the largest-rank class.

    Rank follows label order unless ``permute_classes`` shuffles it. Kept
    samples appear in their source order.
    """
    rng = Rng(spec.seed)
    K = dataset.num_classes
    order = np.arange(K)
    if spec.permute_classes:
        order = rng.shuffle(order)
    counts = dataset.class_counts()
    want = longtail_counts(counts[order[0]], K, spec.ratio)
    keep = []
    for rank, k in enumerate(order):
        idx = np.flatnonzero(dataset.labels == k)
        if len(idx) < want[rank]:
            raise ValueError(f"class {k} has {len(idx)} samples, {want[rank]} required")
        keep.append(rng.shuffle(idx)[:want[rank]])
    keep = np.sort(np.concatenate(keep))
    return Dataset(dataset.features[keep], dataset.labels[keep], K,
                   source=f"{dataset.source}|longtail:{spec.ratio}:{spec.seed}")


def batch_iter(dataset: Dataset, batch_size: int, rng: Rng):
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    order = rng.shuffle(np.arange(len(dataset)))
    for i in range(0, len(order), batch_size):
        idx = order[i:i + batch_size]
        yield dataset.features[idx], dataset.labels[idx]


def write_csv(path, dataset: Dataset):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["label"] + [f"f{j}" for j in range(dataset.dim)])
        for y, row in zip(dataset.labels, dataset.features):
            w.writerow([int(y)] + [f"{v:.17g}" for v in row])


def read_csv(path, num_classes=None) -> Dataset:
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    if not rows or rows[0][0] != "label":
        raise ValueError(f"{path}: expected header starting with 'label'")
    body = np.array([[float(v) for v in r] for r in rows[1:]], dtype=np.float64)
    if body.size == 0:
        raise ValueError(f"{path}: no samples")
    labels = body[:, 0].astype(np.int64)
    return Dataset(body[:, 1:], labels, num_classes or int(labels.max()) + 1, source=f"csv:{path}")


def split_counts(dataset: Dataset):
    return {int(k): int(c) for k, c in enumerate(dataset.class_counts())}
