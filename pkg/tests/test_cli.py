import csv
import json

import numpy as np
import pytest

from iculoss.cli import main
from iculoss.data import Dataset, read_csv, write_csv, write_idx


def cfg_file(tmp_path, name="cfg.json", **over):
    cfg = {
        "loss": "icu",
        "network": {"hidden": [16], "embed_dim": 2},
        "training": {"epochs": 3, "batch_size": 64},
        "data": {"kind": "preset", "name": "blobs", "seed": 0},
        "out_dir": str(tmp_path / "run"),
    }
    cfg.update(over)
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return p


def rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))


def test_train_writes_outputs(tmp_path):
    p = cfg_file(tmp_path)
    assert main(["train", "--config", str(p)]) == 0
    out = tmp_path / "run"
    r = rows(out / "metrics.csv")
    assert r[0] == ["epoch", "train_loss", "train_acc", "test_acc", "wall_s"]
    assert len(r) == 4 and all(row[4] == "" for row in r[1:])
    assert (out / "model.ckpt").read_bytes()[:8] == b"ICUHEAD1"
    assert json.loads((out / "resolved_config.json").read_text())["icu"]["lambda1"] == 0.1


def test_train_zero_epochs(tmp_path):
    p = cfg_file(tmp_path, training={"epochs": 0})
    assert main(["train", "--config", str(p)]) == 0
    assert rows(tmp_path / "run" / "metrics.csv") == [["epoch", "train_loss", "train_acc", "test_acc", "wall_s"]]
    assert (tmp_path / "run" / "model.ckpt").exists()


def test_train_deterministic(tmp_path):
    p = cfg_file(tmp_path)
    main(["train", "--config", str(p), "--out", str(tmp_path / "a")])
    main(["train", "--config", str(p), "--out", str(tmp_path / "b")])
    for f in ("metrics.csv", "model.ckpt"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_wall_time_opt_in(tmp_path):
    p = cfg_file(tmp_path, record_wall_time=True, training={"epochs": 1})
    main(["train", "--config", str(p)])
    assert float(rows(tmp_path / "run" / "metrics.csv")[1][4]) >= 0


def test_icu_blobs_twenty_epochs(tmp_path):
    p = cfg_file(tmp_path, training={"epochs": 20})
    assert main(["train", "--config", str(p)]) == 0
    assert float(rows(tmp_path / "run" / "metrics.csv")[-1][3]) >= 0.99


@pytest.mark.parametrize("over, field", [
    ({"icu": {"alpah": 1}}, "icu.alpah"),
    ({"training": {"epochs": -1}}, "training.epochs"),
    ({"loss": "focal"}, "loss"),
    ({"schema_version": 2}, "schema_version"),
])
def test_config_errors_exit_2(tmp_path, capsys, over, field):
    p = cfg_file(tmp_path, **over)
    assert main(["train", "--config", str(p)]) == 2
    assert field in capsys.readouterr().err


def test_missing_data_exit_3(tmp_path):
    p = cfg_file(tmp_path, data={"kind": "mnist", "train_images": "/nope/a", "train_labels": "/nope/b",
                                 "test_images": "/nope/c", "test_labels": "/nope/d"})
    assert main(["train", "--config", str(p)]) == 3
    assert main(["train", "--config", str(tmp_path / "absent.json")]) == 3


def test_eval_matches_last_train_accuracy(tmp_path):
    p = cfg_file(tmp_path)
    main(["train", "--config", str(p)])
    ckpt = tmp_path / "run" / "model.ckpt"
    before = ckpt.read_bytes()
    assert main(["eval", "--checkpoint", str(ckpt), "--config", str(p), "--split", "train"]) == 0
    acc = json.loads((tmp_path / "run" / "eval.json").read_text())["accuracy"]
    last = float(rows(tmp_path / "run" / "metrics.csv")[-1][2])
    assert abs(acc - last) <= 1e-9
    assert ckpt.read_bytes() == before


def test_eval_dimension_mismatch_exit_4(tmp_path):
    p = cfg_file(tmp_path, training={"epochs": 0})
    main(["train", "--config", str(p)])
    write_idx(tmp_path / "i", np.zeros((3, 28, 28)))
    write_idx(tmp_path / "l", np.array([0, 1, 1]))
    code = main(["eval", "--checkpoint", str(tmp_path / "run" / "model.ckpt"),
                 "--mnist-images", str(tmp_path / "i"), "--mnist-labels", str(tmp_path / "l")])
    assert code == 4


def test_eval_bad_checkpoint_exit_4(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"garbage!" * 4)
    write_csv(tmp_path / "d.csv", Dataset(np.zeros((2, 2)), [0, 1], 2))
    assert main(["eval", "--checkpoint", str(bad), "--data-csv", str(tmp_path / "d.csv")]) == 4


def test_eval_malformed_idx_exit_3(tmp_path):
    from pathlib import Path
    idx = Path(__file__).parent / "fixtures" / "idx"
    p = cfg_file(tmp_path, training={"epochs": 0})
    main(["train", "--config", str(p)])
    code = main(["eval", "--checkpoint", str(tmp_path / "run" / "model.ckpt"),
                 "--mnist-images", str(idx / "bad-magic-images.idx"), "--mnist-labels", str(idx / "good-labels.idx")])
    assert code == 3


def test_embed_outputs_cluster(tmp_path):
    p = cfg_file(tmp_path, training={"epochs": 10})
    main(["train", "--config", str(p)])
    ckpt = str(tmp_path / "run" / "model.ckpt")
    assert main(["embed", "--checkpoint", ckpt, "--config", str(p)]) == 0
    emb = rows(tmp_path / "run" / "embeddings.csv")
    assert emb[0] == ["label", "e0", "e1"] and len(emb) == 1 + 1000
    cp = rows(tmp_path / "run" / "class_params.csv")
    assert cp[0] == ["class", "mu0", "mu1", "var0", "var1"] and len(cp) == 1 + 2
    e = np.array([[float(v) for v in r[1:]] for r in emb[1:]])
    y = np.array([int(r[0]) for r in emb[1:]])
    mu = np.array([[float(v) for v in r[1:3]] for r in cp[1:]])
    d = np.linalg.norm(e[:, None] - mu[None], axis=2)
    own = d[np.arange(len(y)), y].mean()
    other = d[np.arange(len(y)), 1 - y].mean()
    assert own < other


def test_embed_rejects_highdim(tmp_path):
    p = cfg_file(tmp_path, network={"hidden": [], "embed_dim": 3}, training={"epochs": 0})
    main(["train", "--config", str(p)])
    ckpt = str(tmp_path / "run" / "model.ckpt")
    assert main(["embed", "--checkpoint", ckpt, "--config", str(p)]) == 4
    assert main(["embed", "--checkpoint", ckpt, "--config", str(p), "--allow-highdim"]) == 0
    assert rows(tmp_path / "run" / "embeddings.csv")[0] == ["label", "e0", "e1", "e2"]


def test_compare_rows(tmp_path):
    p = cfg_file(tmp_path, training={"epochs": 2},
                 compare={"seeds": [0, 1, 2], "variants": [{"name": "icu", "loss": "icu"},
                                                          {"name": "softmax", "loss": "softmax"}]})
    assert main(["compare", "--config", str(p)]) == 0
    r = rows(tmp_path / "run" / "compare.csv")
    assert r[0] == ["kind", "variant", "loss", "alpha", "gamma", "seed", "test_accuracy", "std_accuracy"]
    assert [x[0] for x in r[1:]] == ["run"] * 6 + ["summary"] * 2
    accs = [float(x[6]) for x in r[1:4]]
    assert float(r[7][6]) == pytest.approx(np.mean(accs), abs=1e-15)
    assert float(r[7][7]) == pytest.approx(np.std(accs, ddof=1), abs=1e-15)


def test_compare_margin_grid_deterministic(tmp_path):
    p = cfg_file(tmp_path, training={"epochs": 1}, compare={"seeds": [0, 1], "variants": "margin_grid"})
    assert main(["compare", "--config", str(p), "--out", str(tmp_path / "a")]) == 0
    assert main(["compare", "--config", str(p), "--out", str(tmp_path / "b")]) == 0
    a = (tmp_path / "a" / "compare.csv").read_bytes()
    assert a == (tmp_path / "b" / "compare.csv").read_bytes()
    summary = [r for r in rows(tmp_path / "a" / "compare.csv") if r[0] == "summary"]
    assert [(r[1], float(r[3]), float(r[4])) for r in summary] == [
        ("icu_no_margin", 0.0, 0.0), ("icu_alpha", 1e-4, 0.0),
        ("icu_gamma", 0.0, 1e-3), ("icu_alpha_gamma", 1e-4, 1e-3)]


def test_compare_needs_two_variants(tmp_path):
    p = cfg_file(tmp_path, compare={"variants": [{"name": "x"}]})
    assert main(["compare", "--config", str(p)]) == 2


def test_gen_data_counts(tmp_path, capsys):
    p = cfg_file(tmp_path, data={"kind": "gmm", "seed": 0, "classes": [
        {"mean": [0.0], "var": [1.0], "count": 1000}, {"mean": [4.0], "var": [4.0], "count": 10}]})
    assert main(["gen-data", "--config", str(p), "--out", str(tmp_path / "g")]) == 0
    assert len(read_csv(tmp_path / "g" / "train.csv")) == 1010
    assert "0:1000 1:10" in capsys.readouterr().out
    main(["gen-data", "--config", str(p), "--out", str(tmp_path / "h")])
    assert (tmp_path / "g" / "train.csv").read_bytes() == (tmp_path / "h" / "train.csv").read_bytes()


def test_gen_data_longtail(tmp_path):
    p = cfg_file(tmp_path, data={"kind": "gmm", "seed": 0, "classes": [
        {"mean": [0.0], "var": [1.0], "count": 100}, {"mean": [4.0], "var": [1.0], "count": 100},
        {"mean": [8.0], "var": [1.0], "count": 100}]})
    assert main(["gen-data", "--config", str(p), "--out", str(tmp_path / "g"), "--longtail", "100"]) == 0
    assert list(read_csv(tmp_path / "g" / "train.csv").class_counts()) == [100, 10, 1]
    assert main(["gen-data", "--config", str(p), "--longtail", "1"]) == 2


def test_gen_data_preset(tmp_path):
    assert main(["gen-data", "--preset", "fig1", "--out", str(tmp_path)]) == 0
    assert list(read_csv(tmp_path / "test.csv").class_counts()) == [1000, 1000]


def test_gradcheck_exit_codes(capsys):
    assert main(["gradcheck", "--instances", "5"]) == 0
    out = capsys.readouterr().out
    for name in ("icu", "softmax", "center", "lgm", "mlp_icu"):
        assert f"PASS {name}: max_relative_error=" in out
    assert main(["gradcheck", "--instances", "5", "--inject-sign-flip"]) == 1
    assert "FAIL icu" in capsys.readouterr().out


def test_resolved_config_round_trip(tmp_path):
    p = cfg_file(tmp_path)
    main(["train", "--config", str(p), "--out", str(tmp_path / "a")])
    resolved = tmp_path / "a" / "resolved_config.json"
    main(["train", "--config", str(resolved), "--out", str(tmp_path / "b")])
    assert resolved.read_bytes() == (tmp_path / "b" / "resolved_config.json").read_bytes().replace(
        str(tmp_path / "b").encode(), str(tmp_path / "a").encode())
    assert (tmp_path / "a" / "model.ckpt").read_bytes() == (tmp_path / "b" / "model.ckpt").read_bytes()


def test_csv_dataset_training(tmp_path):
    write_csv(tmp_path / "tr.csv", Dataset([[0.0], [1.0], [5.0], [6.0]], [0, 0, 1, 1], 2))
    p = cfg_file(tmp_path, data={"kind": "csv", "train": str(tmp_path / "tr.csv")})
    assert main(["train", "--config", str(p)]) == 0
    assert rows(tmp_path / "run" / "metrics.csv")[1][3] == ""
