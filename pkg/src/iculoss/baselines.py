"""Comparison losses: softmax cross-entropy, center loss and L-GM.

Each loss returns ``(loss, grads)`` where ``grads`` is a dict keyed by the
name of the input it differentiates (``"x"``, ``"w"``, ``"c"``, ``"mu"``,
``"log_var"``).
"""

from dataclasses import dataclass

import numpy as np

from .head import LOG_VAR_FLOOR
from .rng import Rng, log_sum_exp


@dataclass
class LinearClassifier:
    w: np.ndarray  # (K, D), no bias

    def __post_init__(self):
        self.w = np.array(self.w, dtype=np.float64, ndmin=2)

    @classmethod
    def init(cls, num_classes, dim, rng: Rng):
        bound = np.sqrt(6.0 / dim)
        return cls((2 * rng.uniform(num_classes * dim) - 1).reshape(num_classes, dim) * bound)


@dataclass
class Centers:
    c: np.ndarray  # (K, D)
    lambda_center: float = 0.01

    def __post_init__(self):
        self.c = np.array(self.c, dtype=np.float64, ndmin=2)
        if self.lambda_center < 0:
            raise ValueError("lambda_center must be >= 0")


@dataclass
class LgmParams:
    mu: np.ndarray
    log_var: np.ndarray
    alpha: float = 1e-4
    lambda_lik: float = 0.1

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=np.float64, ndmin=2)
        self.log_var = np.array(self.log_var, dtype=np.float64, ndmin=2)
        if self.alpha < 0 or self.lambda_lik < 0:
            raise ValueError("alpha and lambda_lik must be >= 0")

    def clamp_(self):
        np.maximum(self.log_var, LOG_VAR_FLOOR, out=self.log_var)
        return self


def _ce_from_logits(logits, labels):
    """Mean cross-entropy and its gradient with respect to the logits."""
    n = len(labels)
    rows = np.arange(n)
    lse = log_sum_exp(logits, axis=1)
    loss = float(np.mean(lse - logits[rows, labels]))
    g = np.exp(logits - lse[:, None])
    g[rows, labels] -= 1.0
    return loss, g / n


def softmax_ce(x, labels, clf: LinearClassifier):
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    loss, g = _ce_from_logits(x @ clf.w.T, labels)
    return loss, {"x": g @ clf.w, "w": g.T @ x}


def center_loss(x, labels, clf: LinearClassifier, centers: Centers):
    """Softmax CE plus ``lambda/2 * sum_i ||x_i - c_{y_i}||^2`` (summed, not averaged)."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    loss, grads = softmax_ce(x, labels, clf)
    diff = x - centers.c[labels]
    lam = centers.lambda_center
    loss += 0.5 * lam * float(np.sum(diff * diff))
    grads["x"] = grads["x"] + lam * diff
    d_c = np.zeros_like(centers.c)
    np.add.at(d_c, labels, -lam * diff)
    grads["c"] = d_c
    return loss, grads


def lgm_distances(x, p: LgmParams) -> np.ndarray:
    """Half squared Mahalanobis distance, ``(N, K)``; no log-determinant."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    diff = x[:, None, :] - p.mu[None]
    return 0.5 * np.sum(diff * diff * np.exp(-p.log_var)[None], axis=2)


def lgm_loss(x, labels, p: LgmParams):
    """Margin CE over ``-d_m`` plus the likelihood term, both batch-averaged."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    rows = np.arange(n)
    dist = lgm_distances(x, p)
    scale = np.ones_like(dist)
    scale[rows, labels] += p.alpha
    ce, g_logit = _ce_from_logits(-scale * dist, labels)
    lik = float(np.mean(dist[rows, labels] + 0.5 * p.log_var[labels].sum(axis=1)))
    loss = ce + p.lambda_lik * lik

    g = -g_logit * scale
    g[rows, labels] += p.lambda_lik / n
    inv_var = np.exp(-p.log_var)
    diff = x[:, None, :] - p.mu[None]
    w = diff * inv_var[None]
    d_x = np.einsum("nk,nkd->nd", g, w)
    d_mu = -np.einsum("nk,nkd->kd", g, w)
    d_log_var = -0.5 * np.einsum("nk,nkd->kd", g, diff * w)
    np.add.at(d_log_var, labels, 0.5 * p.lambda_lik / n)
    return loss, {"x": d_x, "mu": d_mu, "log_var": d_log_var}


def lgm_predict(x, p: LgmParams):
    single = np.ndim(x) == 1
    labels = np.argmin(lgm_distances(x, p), axis=1)
    return int(labels[0]) if single else labels
