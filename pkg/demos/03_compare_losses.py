# coding: utf-8

# # Four losses on one backbone
#
# Three well separated 2-D blobs, a 2 -> 16 -> 2 network and the default
# hyperparameters. Each loss gets the same initial network and batch order.

import tempfile

import numpy as np

from iculoss.cli import main
from iculoss.config import resolve
from iculoss.experiment import load_datasets, run_training

base = {"network": {"hidden": [16], "embed_dim": 2}, "training": {"epochs": 30, "batch_size": 64},
        "data": {"kind": "preset", "name": "blobs3"}}

# In[1]: train each loss

for loss in ("icu", "softmax", "center", "lgm"):
    cfg = resolve({**base, "loss": loss})
    train, test = load_datasets(cfg["data"])
    mlp, head, records = run_training(cfg, train, test)
    anchors, var = head.export_params()
    print(f"{loss:8s} test accuracy {records[-1].test_accuracy:.3f}")
    print("  anchors", np.round(anchors, 2).tolist())
    if var is not None:
        print("  variances", np.round(var, 3).tolist())

# In[2]: the same comparison through the command line, with three seeds

import json
import os

out = tempfile.mkdtemp()
with open(os.path.join(out, "cfg.json"), "w") as f:
    json.dump({**base, "compare": {"seeds": [0, 1, 2], "variants": "margin_grid"}}, f)
main(["compare", "--config", os.path.join(out, "cfg.json"), "--out", out])
print(open(os.path.join(out, "compare.csv")).read())
