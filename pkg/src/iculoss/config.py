"""Experiment configuration: JSON with a schema version; unknown keys are errors.

``resolve(raw)`` fills every default and validates ranges, returning a plain
dict that can be written back out and fed in again unchanged.
"""

import copy
import math
import os

from .models import LOSS_KINDS

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    def __init__(self, field, message):
        super().__init__(f"{field}: {message}")
        self.field = field


class MissingDataError(FileNotFoundError):
    pass


DEFAULTS = {
    "schema_version": SCHEMA_VERSION,
    "loss": "icu",
    "icu": {"alpha": 1e-4, "gamma": 1e-3, "lambda1": 0.1, "lambda2": 0.1},
    "center": {"lambda_center": 0.01},
    "lgm": {"alpha": 1e-4, "lambda_lik": 0.1},
    "network": {"hidden": [128], "embed_dim": 2},
    "training": {"epochs": 10, "batch_size": 128, "optimizer": "adam",
                 "learning_rate": 0.01, "weight_decay": 0.001},
    "data": None,
    "seed": 0,
    "out_dir": "runs/default",
    "record_wall_time": False,
    "compare": None,
}

DATA_KEYS = {
    "gmm": {"kind", "classes", "seed", "longtail"},
    "preset": {"kind", "name", "seed", "longtail"},
    "mnist": {"kind", "train_images", "train_labels", "test_images", "test_labels", "longtail"},
    "csv": {"kind", "train", "test", "num_classes", "longtail"},
}
COMPARE_KEYS = {"seeds", "variants"}
VARIANT_KEYS = {"name", "loss", "icu", "center", "lgm"}


def preset(name):
    """Named synthetic mixtures. ``count``/``test_count`` are per class."""
    if name == "fig1":
        # narrow class near the origin, wide class further out
        return [{"mean": [0.0], "var": [0.25], "count": 1000, "test_count": 1000},
                {"mean": [4.0], "var": [4.0], "count": 1000, "test_count": 1000}]
    if name == "blobs":
        return [{"mean": [-3.0, 0.0], "var": [0.25, 0.25], "count": 500, "test_count": 500},
                {"mean": [3.0, 0.0], "var": [0.25, 0.25], "count": 500, "test_count": 500}]
    if name == "blobs3":
        return [{"mean": [0.0, 0.0], "var": [0.5, 0.5], "count": 100, "test_count": 100},
                {"mean": [6.0, 0.0], "var": [0.5, 0.5], "count": 100, "test_count": 100},
                {"mean": [0.0, 6.0], "var": [0.5, 0.5], "count": 100, "test_count": 100}]
    raise ConfigError("data.name", f"unknown preset {name!r}")


def _merge(defaults, raw, where):
    if not isinstance(raw, dict):
        raise ConfigError(where or "config", "expected an object")
    unknown = set(raw) - set(defaults)
    if unknown:
        raise ConfigError(f"{where}{'.' if where else ''}{sorted(unknown)[0]}", "unknown key")
    out = copy.deepcopy(defaults)
    for k, v in raw.items():
        if isinstance(defaults[k], dict) and v is not None:
            out[k] = _merge(defaults[k], v, f"{where}.{k}" if where else k)
        else:
            out[k] = copy.deepcopy(v)
    return out


def _number(cfg, path, lo=0.0, integer=False, strict=False):
    section, key = path.split(".") if "." in path else (None, path)
    v = cfg[section][key] if section else cfg[key]
    ok = isinstance(v, int) and not isinstance(v, bool) if integer else (
        isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v))
    if not ok or (v <= lo if strict else v < lo):
        kind = "an integer" if integer else "a finite number"
        raise ConfigError(path, f"must be {kind} {'>' if strict else '>='} {lo}, got {v!r}")


def _longtail(lt, where):
    if lt is None:
        return None
    out = _merge({"ratio": None, "seed": 0, "permute_classes": False}, lt, where)
    r = out["ratio"]
    if not isinstance(r, (int, float)) or isinstance(r, bool) or not r > 1:
        raise ConfigError(f"{where}.ratio", f"must be a number > 1, got {r!r}")
    return out


def resolve_data(data):
    if data is None:
        raise ConfigError("data", "missing dataset section")
    if not isinstance(data, dict) or data.get("kind") not in DATA_KEYS:
        raise ConfigError("data.kind", f"must be one of {sorted(DATA_KEYS)}")
    kind = data["kind"]
    unknown = set(data) - DATA_KEYS[kind]
    if unknown:
        raise ConfigError(f"data.{sorted(unknown)[0]}", "unknown key")
    out = dict(data)
    out["longtail"] = _longtail(data.get("longtail"), "data.longtail")
    if kind == "preset":
        preset(data.get("name"))
        out.setdefault("seed", 0)
    elif kind == "gmm":
        out.setdefault("seed", 0)
        classes = data.get("classes")
        if not isinstance(classes, list) or len(classes) < 2:
            raise ConfigError("data.classes", "need a list of at least two classes")
        for i, c in enumerate(classes):
            extra = set(c) - {"mean", "var", "count", "test_count"}
            if extra:
                raise ConfigError(f"data.classes[{i}].{sorted(extra)[0]}", "unknown key")
            for key in ("mean", "var", "count"):
                if key not in c:
                    raise ConfigError(f"data.classes[{i}].{key}", "required")
            if any(v <= 0 for v in c["var"]):
                raise ConfigError(f"data.classes[{i}].var", "variances must be > 0")
            if len(c["mean"]) != len(c["var"]):
                raise ConfigError(f"data.classes[{i}].var", "length differs from mean")
    elif kind == "mnist":
        for key in ("train_images", "train_labels", "test_images", "test_labels"):
            if not isinstance(data.get(key), str):
                raise ConfigError(f"data.{key}", "path required")
    elif kind == "csv":
        if not isinstance(data.get("train"), str):
            raise ConfigError("data.train", "path required")
        out.setdefault("test", None)
        out.setdefault("num_classes", None)
    if not isinstance(out.get("seed", 0), int):
        raise ConfigError("data.seed", "must be an integer")
    return out


def resolve_variant(base, variant, index):
    where = f"compare.variants[{index}]"
    unknown = set(variant) - VARIANT_KEYS
    if unknown:
        raise ConfigError(f"{where}.{sorted(unknown)[0]}", "unknown key")
    if "name" not in variant:
        raise ConfigError(f"{where}.name", "required")
    cfg = copy.deepcopy(base)
    cfg["compare"] = None
    for key in ("icu", "center", "lgm"):
        if key in variant:
            cfg[key] = _merge(base[key], variant[key], f"{where}.{key}")
    cfg["loss"] = variant.get("loss", base["loss"])
    return validate(cfg)


def margin_grid(base_icu):
    """Four ICU variants: no margins, alpha only, gamma only, both."""
    a, g = base_icu["alpha"], base_icu["gamma"]
    return [
        {"name": "icu_no_margin", "loss": "icu", "icu": {"alpha": 0.0, "gamma": 0.0}},
        {"name": "icu_alpha", "loss": "icu", "icu": {"alpha": a, "gamma": 0.0}},
        {"name": "icu_gamma", "loss": "icu", "icu": {"alpha": 0.0, "gamma": g}},
        {"name": "icu_alpha_gamma", "loss": "icu", "icu": {"alpha": a, "gamma": g}},
    ]


def validate(cfg):
    if cfg["schema_version"] != SCHEMA_VERSION:
        raise ConfigError("schema_version", f"unsupported version {cfg['schema_version']!r}")
    if cfg["loss"] not in LOSS_KINDS:
        raise ConfigError("loss", f"must be one of {list(LOSS_KINDS)}, got {cfg['loss']!r}")
    for k in ("alpha", "gamma", "lambda1", "lambda2"):
        _number(cfg, f"icu.{k}")
    _number(cfg, "center.lambda_center")
    _number(cfg, "lgm.alpha")
    _number(cfg, "lgm.lambda_lik")
    hidden = cfg["network"]["hidden"]
    if not isinstance(hidden, list) or not all(isinstance(h, int) and h >= 1 for h in hidden):
        raise ConfigError("network.hidden", "must be a list of positive integers")
    _number(cfg, "network.embed_dim", 1, integer=True)
    _number(cfg, "training.epochs", 0, integer=True)
    _number(cfg, "training.batch_size", 1, integer=True)
    if cfg["training"]["optimizer"] not in ("sgd", "adam"):
        raise ConfigError("training.optimizer", "must be 'sgd' or 'adam'")
    _number(cfg, "training.learning_rate")
    _number(cfg, "training.weight_decay")
    if not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        raise ConfigError("seed", "must be a non-negative integer")
    if not isinstance(cfg["out_dir"], str):
        raise ConfigError("out_dir", "must be a string")
    if not isinstance(cfg["record_wall_time"], bool):
        raise ConfigError("record_wall_time", "must be true or false")
    cfg["data"] = resolve_data(cfg["data"])
    return cfg


def resolve(raw, seed=None, out_dir=None):
    cfg = _merge(DEFAULTS, raw, "")
    if seed is not None:
        cfg["seed"] = seed
    if out_dir is not None:
        cfg["out_dir"] = out_dir
    cfg = validate(cfg)
    cmp_ = cfg["compare"]
    if cmp_ is not None:
        cmp_ = _merge({"seeds": [0, 1, 2], "variants": None}, cmp_, "compare")
        seeds = cmp_["seeds"]
        if not isinstance(seeds, list) or not seeds or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("compare.seeds", "must be a non-empty list of non-negative integers")
        variants = cmp_["variants"]
        if variants == "margin_grid":
            variants = margin_grid(cfg["icu"])
        if not isinstance(variants, list) or len(variants) < 2:
            raise ConfigError("compare.variants", "need at least two variants or 'margin_grid'")
        names = [v.get("name") for v in variants]
        if len(set(names)) != len(names):
            raise ConfigError("compare.variants", "variant names must be unique")
        for i, v in enumerate(variants):
            resolve_variant(cfg, v, i)
        cmp_["variants"] = variants
        cfg["compare"] = cmp_
    return cfg


def check_paths(data):
    keys = {"mnist": ("train_images", "train_labels", "test_images", "test_labels"),
            "csv": ("train", "test")}.get(data["kind"], ())
    for k in keys:
        p = data.get(k)
        if p is not None and not os.path.exists(p):
            raise MissingDataError(f"data.{k}: no such file {p}")
