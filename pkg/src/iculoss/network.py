"""Dense ReLU backbone with hand-written backprop, SGD/Adam, the training
loop and the checkpoint file format.

Checkpoint layout (all integers little-endian)::

    8 bytes   magic b"ICUHEAD1"
    u32       length of the metadata block
    bytes     UTF-8 JSON metadata, sorted keys (loss kind, hyperparameters,
              layer sizes, number of classes, free-form ``extra``)
    u32       number of arrays
    per array: u16 name length, name (UTF-8), u32 ndim, ndim x u64 dims
    float64   array payloads in the same order, row-major, little-endian

Array names: ``layer{i}.weight`` (out x in), ``layer{i}.bias``, then the head
parameters under the names the head uses (``mu``, ``log_var``, ``w``, ``c``).
"""

import json
import struct
from dataclasses import dataclass

import numpy as np

from . import baselines, head
from .models import CenterHead, IcuHead, LgmHead, SoftmaxHead
from .rng import Rng

MAGIC = b"ICUHEAD1"


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass
class DenseLayer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)


class Mlp:
    """ReLU between layers, identity on the last (embedding) layer."""

    def __init__(self, layers):
        self.layers = list(layers)
        for a, b in zip(self.layers, self.layers[1:]):
            if b.weight.shape[1] != a.weight.shape[0]:
                raise ShapeError("consecutive layer shapes do not chain")

    @classmethod
    def init(cls, sizes, rng: Rng):
        """He-uniform weights, zero biases."""
        if len(sizes) < 2:
            raise ValueError("need at least input and output sizes")
        layers = []
        for fan_in, fan_out in zip(sizes, sizes[1:]):
            bound = np.sqrt(6.0 / fan_in)
            w = (2 * rng.uniform(fan_in * fan_out) - 1).reshape(fan_out, fan_in) * bound
            layers.append(DenseLayer(w, np.zeros(fan_out)))
        return cls(layers)

    @property
    def sizes(self):
        return [self.layers[0].weight.shape[1]] + [l.weight.shape[0] for l in self.layers]

    def params(self):
        out = {}
        for i, layer in enumerate(self.layers):
            out[f"layer{i}.weight"] = layer.weight
            out[f"layer{i}.bias"] = layer.bias
        return out


def forward(mlp: Mlp, batch):
    h = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    if h.shape[1] != mlp.sizes[0]:
        raise ShapeError(f"input dimension {h.shape[1]} != network input {mlp.sizes[0]}")
    cache = []
    last = len(mlp.layers) - 1
    for i, layer in enumerate(mlp.layers):
        z = h @ layer.weight.T + layer.bias
        cache.append((h, z))
        h = z if i == last else np.maximum(z, 0.0)
    return h, cache


def backward(mlp: Mlp, cache, d_emb):
    """Returns ``(grads, d_input)``; ``grads`` keyed like ``Mlp.params``.

    ReLU passes gradient only where the pre-activation is strictly positive.
    """
    if len(cache) != len(mlp.layers):
        raise ShapeError("cache does not belong to this network")
    g = np.asarray(d_emb, dtype=np.float64)
    if g.shape != cache[-1][1].shape:
        raise ShapeError(f"d_emb shape {g.shape} != output shape {cache[-1][1].shape}")
    grads = {}
    last = len(mlp.layers) - 1
    for i in range(last, -1, -1):
        h, z = cache[i]
        if i != last:
            g = g * (z > 0)
        grads[f"layer{i}.weight"] = g.T @ h
        grads[f"layer{i}.bias"] = g.sum(axis=0)
        g = g @ mlp.layers[i].weight
    return grads, g


class Optimizer:
    """SGD or Adam with L2 weight decay folded into the gradient. Updates in place."""

    def __init__(self, kind="adam", learning_rate=0.01, weight_decay=0.001,
                 betas=(0.9, 0.999), eps=1e-8):
        if kind not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {kind!r}")
        if not learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        self.kind = kind
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.m = {}
        self.v = {}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        lr, wd = self.learning_rate, self.weight_decay
        for name, p in params.items():
            g = grads[name]
            if g.shape != p.shape:
                raise ShapeError(f"gradient for {name} has shape {g.shape}, expected {p.shape}")
            if wd:
                g = g + wd * p
            if self.kind == "sgd":
                p -= lr * g
                continue
            if name not in self.m:
                self.m[name] = np.zeros_like(p)
                self.v[name] = np.zeros_like(p)
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1 - self.beta1) * g
            v *= self.beta2
            v += (1 - self.beta2) * g * g
            m_hat = m / (1 - self.beta1**self.t)
            v_hat = v / (1 - self.beta2**self.t)
            p -= lr * m_hat / (np.sqrt(v_hat) + self.eps)


def optimizer_step(state: Optimizer, params, grads, trainable_head=None):
    state.step(params, grads)
    if trainable_head is not None:
        trainable_head.clamp_()
    return params


@dataclass
class EpochMetrics:
    train_loss: float
    train_accuracy: float


def embed(mlp: Mlp, features, chunk=8192):
    features = np.atleast_2d(features)
    parts = [forward(mlp, features[i:i + chunk])[0] for i in range(0, len(features), chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, mlp.sizes[-1]))


def evaluate(mlp: Mlp, trainable_head, features, labels) -> float:
    """Accuracy with all training margins off."""
    pred = trainable_head.predict(embed(mlp, features))
    return float(np.mean(pred == np.asarray(labels)))


def train_epoch(mlp: Mlp, trainable_head, dataset, optimizer: Optimizer, rng: Rng,
                batch_size=128) -> EpochMetrics:
    """One shuffled pass, then a full-pass accuracy with the updated weights."""
    from .data import batch_iter

    params = {**mlp.params(), **trainable_head.params()}
    total, seen = 0.0, 0
    for xb, yb in batch_iter(dataset, batch_size, rng):
        emb, cache = forward(mlp, xb)
        loss, d_emb, head_grads = trainable_head.loss_grad(emb, yb)
        net_grads, _ = backward(mlp, cache, d_emb)
        optimizer_step(optimizer, params, {**net_grads, **head_grads}, trainable_head)
        total += loss * len(yb)
        seen += len(yb)
    acc = evaluate(mlp, trainable_head, dataset.features, dataset.labels)
    return EpochMetrics(total / seen, acc)


def save_checkpoint(path, mlp: Mlp, trainable_head, extra=None):
    arrays = {**mlp.params(), **trainable_head.params()}
    meta = {
        "loss": trainable_head.kind,
        "hyper": trainable_head.hyper(),
        "sizes": mlp.sizes,
        "num_classes": int(next(iter(trainable_head.params().values())).shape[0]),
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode()
    buf = bytearray(MAGIC)
    buf += struct.pack("<I", len(meta_bytes)) + meta_bytes
    buf += struct.pack("<I", len(arrays))
    for name, a in arrays.items():
        nb = name.encode()
        buf += struct.pack("<H", len(nb)) + nb + struct.pack("<I", a.ndim)
        buf += struct.pack(f"<{a.ndim}Q", *a.shape)
    for a in arrays.values():
        buf += np.ascontiguousarray(a, dtype="<f8").tobytes()
    with open(path, "wb") as f:
        f.write(bytes(buf))


def load_checkpoint(path):
    """Returns ``(mlp, head, meta)``."""
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:8] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {raw[:8]!r}")
    try:
        off = 8
        (mlen,) = struct.unpack_from("<I", raw, off)
        off += 4
        meta = json.loads(raw[off:off + mlen].decode())
        off += mlen
        (count,) = struct.unpack_from("<I", raw, off)
        off += 4
        shapes = []
        for _ in range(count):
            (nlen,) = struct.unpack_from("<H", raw, off)
            off += 2
            name = raw[off:off + nlen].decode()
            off += nlen
            (ndim,) = struct.unpack_from("<I", raw, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}Q", raw, off)
            off += 8 * ndim
            shapes.append((name, shape))
        arrays = {}
        for name, shape in shapes:
            n = int(np.prod(shape))
            if off + 8 * n > len(raw):
                raise CheckpointError(f"{path}: truncated payload for {name}")
            arrays[name] = np.frombuffer(raw, dtype="<f8", count=n, offset=off).reshape(shape).astype(np.float64)
            off += 8 * n
    except struct.error as e:
        raise CheckpointError(f"{path}: truncated header ({e})") from None

    layers = []
    for i in range(len(meta["sizes"]) - 1):
        layers.append(DenseLayer(arrays[f"layer{i}.weight"], arrays[f"layer{i}.bias"]))
    mlp = Mlp(layers)
    kind, hyper = meta["loss"], meta["hyper"]
    if kind == "icu":
        h = IcuHead(head.ClassGaussians(arrays["mu"], arrays["log_var"]), head.MarginConfig(**hyper))
    elif kind == "lgm":
        h = LgmHead(baselines.LgmParams(arrays["mu"], arrays["log_var"], **hyper))
    elif kind == "softmax":
        h = SoftmaxHead(baselines.LinearClassifier(arrays["w"]))
    elif kind == "center":
        h = CenterHead(baselines.LinearClassifier(arrays["w"]), baselines.Centers(arrays["c"], **hyper))
    else:
        raise CheckpointError(f"{path}: unknown loss kind {kind!r}")
    return mlp, h, meta
