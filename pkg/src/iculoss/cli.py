"""``iculoss`` command line.

Verbs: gen-data, train, eval, embed, compare, gradcheck.
Exit codes: 0 success, 1 check failure, 2 config error, 3 missing data,
4 shape mismatch.
"""

import argparse
import csv
import json
import os
import statistics
import sys

from . import data as data_mod
from .config import ConfigError, MissingDataError, preset, resolve, resolve_variant
from .experiment import load_datasets, run_training
from .gradcheck import TOL, run_suite
from .network import CheckpointError, ShapeError, embed, evaluate, load_checkpoint, save_checkpoint


EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_DATA, EXIT_SHAPE = 0, 1, 2, 3, 4


CHECKPOINT_NAME = "model.ckpt"


def fmt(v):
    return "" if v is None else f"{v:.17g}"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _load_config(path, seed=None, out=None):
    if path is None:
        raise ConfigError("--config", "a config file is required")
    if not os.path.exists(path):
        raise MissingDataError(f"config file {path} not found")
    with open(path) as f:
        try:
            raw = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError("config", f"invalid JSON ({e})") from None
    return resolve(raw, seed=seed, out_dir=out)


def _write_json(path, obj):
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def cmd_train(args):
    cfg = _load_config(args.config, args.seed, args.out)
    train, test = load_datasets(cfg["data"])
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "resolved_config.json"), cfg)
    wall = cfg["record_wall_time"]
    rows = []

    def log(rec):
        rows.append([rec.epoch, fmt(rec.train_loss), fmt(rec.train_accuracy),
                     fmt(rec.test_accuracy) if test is not None else "",
                     fmt(rec.wall_time_seconds) if wall else ""])
        print(f"epoch {rec.epoch}: loss {rec.train_loss:.4f} train_acc {rec.train_accuracy:.4f} "
              f"test_acc {rec.test_accuracy:.4f}")

    mlp, trainable, _ = run_training(cfg, train, test, on_epoch=log)
    _write_csv(os.path.join(out, "metrics.csv"), ["epoch", "train_loss", "train_acc", "test_acc", "wall_s"], rows)
    save_checkpoint(os.path.join(out, CHECKPOINT_NAME), mlp, trainable,
                    extra={"data_source": train.source, "seed": cfg["seed"]})
    return EXIT_OK


def _eval_dataset(args):
    if args.data_csv:
        if not os.path.exists(args.data_csv):
            raise MissingDataError(f"no such file {args.data_csv}")
        return data_mod.read_csv(args.data_csv)
    if args.mnist_images or args.mnist_labels:
        for p in (args.mnist_images, args.mnist_labels):
            if not p or not os.path.exists(p):
                raise MissingDataError(f"MNIST file missing: {p}")
        return data_mod.load_mnist_idx(args.mnist_images, args.mnist_labels)
    if args.config:
        train, test = load_datasets(_load_config(args.config)["data"])
        ds = train if args.split == "train" else test
        if ds is None:
            raise MissingDataError("config has no test split")
        return ds
    raise ConfigError("dataset", "give --data-csv, --mnist-images/--mnist-labels, or --config")


def _load_model(args, ds):
    if not os.path.exists(args.checkpoint):
        raise MissingDataError(f"checkpoint {args.checkpoint} not found")
    mlp, trainable, meta = load_checkpoint(args.checkpoint)
    if mlp.sizes[0] != ds.dim:
        raise ShapeError(f"checkpoint expects input dimension {mlp.sizes[0]}, dataset has {ds.dim}")
    return mlp, trainable, meta


def _out_dir(args):
    out = args.out or os.path.dirname(os.path.abspath(args.checkpoint))
    os.makedirs(out, exist_ok=True)
    return out


def cmd_eval(args):
    ds = _eval_dataset(args)
    mlp, trainable, meta = _load_model(args, ds)
    # prediction never applies training margins
    acc = evaluate(mlp, trainable, ds.features, ds.labels)
    _write_json(os.path.join(_out_dir(args), "eval.json"),
                {"accuracy": acc, "n": len(ds), "loss": meta["loss"], "data_source": ds.source})
    print(f"accuracy {acc:.17g}")
    return EXIT_OK


def cmd_embed(args):
    ds = _eval_dataset(args)
    mlp, trainable, _ = _load_model(args, ds)
    dim = mlp.sizes[-1]
    if dim != 2 and not args.allow_highdim:
        print(f"error: embedding dimension is {dim}; embed exports 2-D embeddings "
              "(pass --allow-highdim to write all columns)", file=sys.stderr)
        return EXIT_SHAPE
    out = _out_dir(args)
    e = embed(mlp, ds.features)
    _write_csv(os.path.join(out, "embeddings.csv"), ["label"] + [f"e{j}" for j in range(dim)],
               ([int(y)] + [fmt(v) for v in row] for y, row in zip(ds.labels, e)))
    anchors, var = trainable.export_params()
    rows = []
    for k in range(len(anchors)):
        vs = [fmt(v) for v in var[k]] if var is not None else [""] * dim
        rows.append([k] + [fmt(v) for v in anchors[k]] + vs)
    _write_csv(os.path.join(out, "class_params.csv"),
               ["class"] + [f"mu{j}" for j in range(dim)] + [f"var{j}" for j in range(dim)], rows)
    print(f"wrote {len(e)} embeddings and {len(anchors)} class rows to {out}")
    return EXIT_OK


def cmd_compare(args):
    cfg = _load_config(args.config, args.seed, args.out)
    if cfg["compare"] is None:
        raise ConfigError("compare", "section required for the compare verb")
    train, test = load_datasets(cfg["data"])
    if test is None:
        raise ConfigError("data.test", "compare needs a test split")
    out = cfg["out_dir"]
    os.makedirs(out, exist_ok=True)
    _write_json(os.path.join(out, "resolved_config.json"), cfg)
    rows, summary = [], []
    for i, variant in enumerate(cfg["compare"]["variants"]):
        vcfg = resolve_variant(cfg, variant, i)
        alpha = gamma = None
        if vcfg["loss"] in ("icu", "lgm"):
            alpha = vcfg[vcfg["loss"]]["alpha"]
        if vcfg["loss"] == "icu":
            gamma = vcfg["icu"]["gamma"]
        accs = []
        for seed in cfg["compare"]["seeds"]:
            vcfg["seed"] = seed
            mlp, trainable, recs = run_training(vcfg, train, test)
            acc = recs[-1].test_accuracy if recs else evaluate(mlp, trainable, test.features, test.labels)
            accs.append(acc)
            rows.append(["run", variant["name"], vcfg["loss"], fmt(alpha), fmt(gamma), seed, fmt(acc), ""])
            print(f"{variant['name']} seed {seed}: test_acc {acc:.4f}")
        sd = statistics.stdev(accs) if len(accs) > 1 else 0.0
        summary.append(["summary", variant["name"], vcfg["loss"], fmt(alpha), fmt(gamma), "",
                        fmt(statistics.fmean(accs)), fmt(sd)])
    _write_csv(os.path.join(out, "compare.csv"),
               ["kind", "variant", "loss", "alpha", "gamma", "seed", "test_accuracy", "std_accuracy"],
               rows + summary)
    return EXIT_OK


def cmd_gradcheck(args):
    seed = 0 if args.seed is None else args.seed
    results, elapsed = run_suite(seed, args.instances, TOL, sign_flip=args.inject_sign_flip)
    ok = True
    for name, rep in results.items():
        status = "PASS" if rep.passed else "FAIL"
        print(f"{status} {name}: max_relative_error={rep.max_relative_error:.3e} worst={rep.worst_coordinate}")
        ok &= rep.passed
    print(f"{len(results)} suites x {args.instances} instances, tol {TOL:g}, {elapsed:.2f}s")
    return EXIT_OK if ok else EXIT_CHECK


def cmd_gen_data(args):
    if args.preset:
        data = {"kind": "preset", "name": args.preset, "seed": 0, "longtail": None}
        if args.seed is not None:
            data["seed"] = args.seed
    else:
        cfg = _load_config(args.config)
        data = cfg["data"]
        if data["kind"] not in ("gmm", "preset"):
            raise ConfigError("data.kind", "gen-data needs a synthetic ('gmm' or 'preset') dataset")
        if args.seed is not None:
            data["seed"] = args.seed
    if args.longtail is not None:
        if not args.longtail > 1:
            raise ConfigError("--longtail", "ratio must be > 1")
        data["longtail"] = {"ratio": args.longtail, "seed": data["seed"], "permute_classes": False}
    if data["kind"] == "preset":
        preset(data["name"])
    train, test = load_datasets(data)
    out = args.out or "."
    os.makedirs(out, exist_ok=True)
    data_mod.write_csv(os.path.join(out, "train.csv"), train)
    data_mod.write_csv(os.path.join(out, "test.csv"), test)
    for name, ds in (("train", train), ("test", test)):
        counts = " ".join(f"{k}:{c}" for k, c in data_mod.split_counts(ds).items())
        print(f"{name}: {len(ds)} rows ({counts})")
    return EXIT_OK


def build_parser():
    # SUPPRESS keeps a subcommand's unset flag from clobbering the global one
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="experiment config (JSON)")
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument("--out", help="output directory")

    p = argparse.ArgumentParser(prog="iculoss", description="Train, evaluate and compare Gaussian-head classifiers.", parents=[common])
    sub = p.add_subparsers(dest="verb", required=True)

    def dataset_args(sp):
        sp.add_argument("--checkpoint", required=True)
        sp.add_argument("--data-csv")
        sp.add_argument("--mnist-images")
        sp.add_argument("--mnist-labels")
        sp.add_argument("--split", choices=("train", "test"), default="test",
                        help="split to use when the dataset comes from --config")

    g = sub.add_parser("gen-data", parents=[common], help="write synthetic train/test CSVs")
    g.add_argument("--preset", choices=("fig1", "blobs", "blobs3"))
    g.add_argument("--longtail", type=float, help="imbalance ratio for the train split")
    g.set_defaults(fn=cmd_gen_data)

    t = sub.add_parser("train", parents=[common], help="train one model")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint")
    dataset_args(e)
    e.set_defaults(fn=cmd_eval)

    m = sub.add_parser("embed", parents=[common], help="export embeddings and class parameters")
    dataset_args(m)
    m.add_argument("--allow-highdim", action="store_true")
    m.set_defaults(fn=cmd_embed)

    c = sub.add_parser("compare", parents=[common], help="multi-variant, multi-seed comparison")
    c.set_defaults(fn=cmd_compare)

    k = sub.add_parser("gradcheck", parents=[common], help="finite-difference check of all gradients")
    k.add_argument("--instances", type=int, default=100)
    k.add_argument("--inject-sign-flip", action="store_true", help=argparse.SUPPRESS)
    k.set_defaults(fn=cmd_gradcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    for name in ("config", "seed", "out"):
        if not hasattr(args, name):
            setattr(args, name, None)
    try:
        return args.fn(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingDataError, FileNotFoundError) as e:
        print(f"missing data: {e}", file=sys.stderr)
        return EXIT_DATA
    except ShapeError as e:
        print(f"shape mismatch: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except CheckpointError as e:
        print(f"unreadable checkpoint: {e}", file=sys.stderr)
        return EXIT_SHAPE
    except data_mod.IdxFormatError as e:
        print(f"bad IDX file ({e.field}): {e}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as e:
        print(f"invalid input: {e}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
