"""Build datasets and models from a resolved config and run training.

Seeds: with ``rng = Rng(cfg["seed"])``, the network is initialised from
``rng.spawn(0)``, the head from ``rng.spawn(1)`` and minibatch order comes
from ``rng.spawn(2)``. Synthetic train data uses ``data.seed``, the test
split ``data.seed + 1``.
"""

import time
from dataclasses import dataclass

from . import data as data_mod
from .config import check_paths, preset
from .models import make_head
from .network import Mlp, Optimizer, evaluate, train_epoch
from .rng import Rng


@dataclass
class MetricsRecord:
    epoch: int
    train_loss: float
    train_accuracy: float
    test_accuracy: float
    wall_time_seconds: float


def _gmm_pair(classes, seed):
    train = data_mod.GmmSpec([{"mean": c["mean"], "var": c["var"], "count": c["count"]} for c in classes], seed)
    test = data_mod.GmmSpec([{"mean": c["mean"], "var": c["var"], "count": c.get("test_count", c["count"])}
                             for c in classes], seed + 1)
    return data_mod.gen_gmm(train), data_mod.gen_gmm(test)


def load_datasets(data):
    """``(train, test)`` for a resolved data section; ``test`` may be None."""
    check_paths(data)
    kind = data["kind"]
    if kind == "preset":
        train, test = _gmm_pair(preset(data["name"]), data["seed"])
    elif kind == "gmm":
        train, test = _gmm_pair(data["classes"], data["seed"])
    elif kind == "mnist":
        train = data_mod.load_mnist_idx(data["train_images"], data["train_labels"])
        test = data_mod.load_mnist_idx(data["test_images"], data["test_labels"])
    else:
        train = data_mod.read_csv(data["train"], data["num_classes"])
        test = data_mod.read_csv(data["test"], train.num_classes) if data["test"] else None
    lt = data["longtail"]
    if lt is not None:
        train = data_mod.longtail_subsample(train, data_mod.LongTailSpec(lt["ratio"], lt["seed"],
                                                                         lt["permute_classes"]))
    return train, test


def head_hyper(cfg):
    return {} if cfg["loss"] == "softmax" else dict(cfg[cfg["loss"]])


def build_model(cfg, input_dim, num_classes):
    rng = Rng(cfg["seed"])
    sizes = [input_dim] + list(cfg["network"]["hidden"]) + [cfg["network"]["embed_dim"]]
    mlp = Mlp.init(sizes, rng.spawn(0))
    trainable = make_head(cfg["loss"], num_classes, cfg["network"]["embed_dim"], rng.spawn(1), head_hyper(cfg))
    return mlp, trainable


def run_training(cfg, train, test, on_epoch=None):
    """Returns ``(mlp, head, records)``."""
    t = cfg["training"]
    mlp, trainable = build_model(cfg, train.dim, train.num_classes)
    opt = Optimizer(t["optimizer"], t["learning_rate"], t["weight_decay"])
    batch_rng = Rng(cfg["seed"]).spawn(2)
    records = []
    start = time.perf_counter()
    for epoch in range(1, t["epochs"] + 1):
        m = train_epoch(mlp, trainable, train, opt, batch_rng, t["batch_size"])
        test_acc = evaluate(mlp, trainable, test.features, test.labels) if test is not None else float("nan")
        rec = MetricsRecord(epoch, m.train_loss, m.train_accuracy, test_acc, time.perf_counter() - start)
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return mlp, trainable, records
