"""Trainable classification heads, one per loss kind.

A head owns the loss-specific parameters (``mu``/``log_var`` for ICU and
L-GM, ``w`` for softmax, ``w``/``c`` for center loss), exposes them by name
for the optimizer, and turns embeddings into ``(loss, d_embeddings, grads)``.
"""

import numpy as np

from . import baselines, head
from .rng import Rng

LOSS_KINDS = ("icu", "softmax", "center", "lgm")


class IcuHead:
    kind = "icu"

    def __init__(self, gaussians: head.ClassGaussians, margins: head.MarginConfig):
        self.gaussians = gaussians
        self.margins = margins

    def params(self):
        return {"mu": self.gaussians.mu, "log_var": self.gaussians.log_var}

    def loss_grad(self, emb, labels):
        out = head.icu_loss_forward(emb, labels, self.gaussians, self.margins)
        g = head.icu_loss_backward(emb, labels, self.gaussians, self.margins)
        return out.total, g.d_x, {"mu": g.d_mu, "log_var": g.d_log_var}

    def predict(self, emb):
        return head.predict(np.atleast_2d(emb), self.gaussians)

    def clamp_(self):
        self.gaussians.clamp_()

    def hyper(self):
        m = self.margins
        return {"alpha": m.alpha, "gamma": m.gamma, "lambda1": m.lambda1, "lambda2": m.lambda2}

    def export_params(self):
        return self.gaussians.mu, self.gaussians.var


class SoftmaxHead:
    kind = "softmax"

    def __init__(self, clf: baselines.LinearClassifier):
        self.clf = clf

    def params(self):
        return {"w": self.clf.w}

    def loss_grad(self, emb, labels):
        loss, g = baselines.softmax_ce(emb, labels, self.clf)
        return loss, g.pop("x"), g

    def predict(self, emb):
        return np.argmax(np.atleast_2d(emb) @ self.clf.w.T, axis=1)

    def clamp_(self):
        pass

    def hyper(self):
        return {}

    def export_params(self):
        return self.clf.w, None


class CenterHead(SoftmaxHead):
    kind = "center"

    def __init__(self, clf: baselines.LinearClassifier, centers: baselines.Centers):
        super().__init__(clf)
        self.centers = centers

    def params(self):
        return {"w": self.clf.w, "c": self.centers.c}

    def loss_grad(self, emb, labels):
        loss, g = baselines.center_loss(emb, labels, self.clf, self.centers)
        return loss, g.pop("x"), g

    def hyper(self):
        return {"lambda_center": self.centers.lambda_center}

    def export_params(self):
        return self.centers.c, None


class LgmHead:
    kind = "lgm"

    def __init__(self, p: baselines.LgmParams):
        self.p = p

    def params(self):
        return {"mu": self.p.mu, "log_var": self.p.log_var}

    def loss_grad(self, emb, labels):
        loss, g = baselines.lgm_loss(emb, labels, self.p)
        return loss, g.pop("x"), g

    def predict(self, emb):
        return baselines.lgm_predict(np.atleast_2d(emb), self.p)

    def clamp_(self):
        self.p.clamp_()

    def hyper(self):
        return {"alpha": self.p.alpha, "lambda_lik": self.p.lambda_lik}

    def export_params(self):
        return self.p.mu, np.exp(self.p.log_var)


def make_head(kind: str, num_classes: int, dim: int, rng: Rng, hyper: dict | None = None):
    """Fresh head with seeded initial parameters.

    ``hyper`` holds the loss hyperparameters by the names returned from
    ``hyper()``; missing entries take the defaults.
    """
    hyper = dict(hyper or {})
    if kind == "icu":
        return IcuHead(head.ClassGaussians.init(num_classes, dim, rng), head.MarginConfig(**hyper))
    if kind == "lgm":
        g = head.ClassGaussians.init(num_classes, dim, rng)
        return LgmHead(baselines.LgmParams(g.mu, g.log_var, **hyper))
    clf = baselines.LinearClassifier.init(num_classes, dim, rng)
    if kind == "softmax":
        if hyper:
            raise ValueError(f"softmax takes no hyperparameters, got {sorted(hyper)}")
        return SoftmaxHead(clf)
    if kind == "center":
        c = rng.normal(num_classes * dim).reshape(num_classes, dim)
        return CenterHead(clf, baselines.Centers(c, **hyper))
    raise ValueError(f"unknown loss kind {kind!r}; expected one of {LOSS_KINDS}")
