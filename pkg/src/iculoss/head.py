"""Intra-class uncertainty (ICU) Gaussian classification head.

Every class ``k`` owns a mean ``mu[k]`` and a diagonal covariance stored as
per-dimension log-variances ``log_var[k]``. The decision distance of an
embedding ``x`` to class ``k`` is

    d_k(x) = 0.5 * (sum_d (x_d - mu_kd)^2 / var_kd + sum_d log var_kd)

so the log-determinant (the class uncertainty) takes part in the decision,
not only the Mahalanobis term. Training adds an inter-class margin ``alpha``
(the ground-truth distance is scaled by ``1 + alpha``), an intra-class margin
``gamma`` (``ln(1 + gamma)`` is added to the ground-truth log-determinant) and
a moment-matching penalty tying ``mu`` and ``var`` to minibatch statistics.
Both margins are dropped at prediction time.

Arrays are batched: ``x`` is ``(N, D)``, ``labels`` is ``(N,)``, ``mu`` and
``log_var`` are ``(K, D)``.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import Rng, log_sum_exp

VAR_FLOOR = 1e-6
LOG_VAR_FLOOR = math.log(VAR_FLOOR)


@dataclass
class ClassGaussians:
    mu: np.ndarray
    log_var: np.ndarray

    def __post_init__(self):
        self.mu = np.array(self.mu, dtype=np.float64, ndmin=2)
        self.log_var = np.array(self.log_var, dtype=np.float64, ndmin=2)
        if self.mu.shape != self.log_var.shape:
            raise ValueError(f"mu {self.mu.shape} and log_var {self.log_var.shape} differ")

    @property
    def num_classes(self) -> int:
        return self.mu.shape[0]

    @property
    def dim(self) -> int:
        return self.mu.shape[1]

    @property
    def var(self) -> np.ndarray:
        return np.exp(self.log_var)

    @classmethod
    def init(cls, num_classes: int, dim: int, rng: Rng) -> "ClassGaussians":
        """Means from N(0, 1), unit variances."""
        if num_classes < 2 or dim < 1:
            raise ValueError("need K >= 2 and D >= 1")
        mu = rng.normal(num_classes * dim).reshape(num_classes, dim)
        return cls(mu, np.zeros((num_classes, dim)))

    def clamp_(self):
        np.maximum(self.log_var, LOG_VAR_FLOOR, out=self.log_var)
        return self


@dataclass(frozen=True)
class MarginConfig:
    alpha: float = 1e-4
    gamma: float = 1e-3
    lambda1: float = 0.1
    lambda2: float = 0.1

    def __post_init__(self):
        for name in ("alpha", "gamma", "lambda1", "lambda2"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{name} must be finite and >= 0, got {v}")


@dataclass
class BatchMoments:
    mean: np.ndarray  # (K, D), zero rows where count == 0
    var: np.ndarray  # (K, D), around the learned mu, not the batch mean
    count: np.ndarray  # (K,)

    @property
    def present(self) -> np.ndarray:
        return self.count > 0


@dataclass
class LossOutput:
    total: float
    classification_term: float
    regularizer_term: float
    per_sample_log_posterior: np.ndarray


@dataclass
class GradientBundle:
    d_x: np.ndarray
    d_mu: np.ndarray
    d_log_var: np.ndarray
    extra: dict = field(default_factory=dict)


def _check_class(k, params):
    if not 0 <= k < params.num_classes:
        raise IndexError(f"class index {k} out of range [0, {params.num_classes})")


def mahalanobis_sq(x, params: ClassGaussians) -> np.ndarray:
    """Squared Mahalanobis distances, ``(N, K)``."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    diff = x[:, None, :] - params.mu[None, :, :]
    return np.sum(diff * diff * np.exp(-params.log_var)[None], axis=2)


def decision_distances(x, params: ClassGaussians) -> np.ndarray:
    """All margin-free decision distances, ``(N, K)``."""
    logdet = params.log_var.sum(axis=1)
    return 0.5 * (mahalanobis_sq(x, params) + logdet[None, :])


def decision_distance(x, k: int, params: ClassGaussians, gamma: float = 0.0) -> float:
    _check_class(k, params)
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    diff = x - params.mu[k]
    maha = float(np.sum(diff * diff * np.exp(-params.log_var[k])))
    return 0.5 * (maha + math.log1p(gamma) + float(params.log_var[k].sum()))


def posterior(x, params: ClassGaussians) -> np.ndarray:
    """Equal-prior class posterior. ``(K,)`` for one sample, ``(N, K)`` for a batch."""
    single = np.ndim(x) == 1
    logits = -decision_distances(x, params)
    logp = logits - log_sum_exp(logits, axis=1)[:, None]
    p = np.exp(logp)
    return p[0] if single else p


def predict(x, params: ClassGaussians):
    """Argmin decision distance with margins off; ties go to the lowest index."""
    single = np.ndim(x) == 1
    labels = np.argmin(decision_distances(x, params), axis=1)
    return int(labels[0]) if single else labels


def batch_moments(x, labels, params: ClassGaussians) -> BatchMoments:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    K, D = params.mu.shape
    if labels.min() < 0 or labels.max() >= K:
        raise IndexError("label out of range")
    count = np.bincount(labels, minlength=K)
    sums = np.zeros((K, D))
    np.add.at(sums, labels, x)
    sq = np.zeros((K, D))
    dev = x - params.mu[labels]
    np.add.at(sq, labels, dev * dev)
    safe = np.maximum(count, 1)[:, None]
    return BatchMoments(sums / safe, sq / safe, count)


def regularizer(params: ClassGaussians, moments: BatchMoments, cfg: MarginConfig) -> float:
    present = moments.present
    dm = (params.mu - moments.mean)[present]
    dv = (params.var - moments.var)[present]
    return float(cfg.lambda1 * np.sum(dm * dm) + cfg.lambda2 * np.sum(dv * dv))


def _logits(x, labels, params, cfg):
    """Training logits: margin-free ``-d_k`` off the label, margin-adjusted on it."""
    n = len(labels)
    dist = decision_distances(x, params)
    rows = np.arange(n)
    scale = np.ones_like(dist)
    scale[rows, labels] = 1.0 + cfg.alpha
    shifted = dist.copy()
    shifted[rows, labels] += 0.5 * math.log1p(cfg.gamma)
    return -scale * shifted, scale


def icu_loss_forward(x, labels, params: ClassGaussians, cfg: MarginConfig) -> LossOutput:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    if len(labels) < 1:
        raise ValueError("empty batch")
    logits, _ = _logits(x, labels, params, cfg)
    log_post = logits[np.arange(len(labels)), labels] - log_sum_exp(logits, axis=1)
    cls_term = float(-np.mean(log_post))
    reg = regularizer(params, batch_moments(x, labels, params), cfg)
    return LossOutput(cls_term + reg, cls_term, reg, log_post)


def icu_loss_backward(x, labels, params: ClassGaussians, cfg: MarginConfig) -> GradientBundle:
    """Exact gradients of ``icu_loss_forward(...).total``.

    The classification part is the usual softmax-minus-one-hot signal pushed
    through the distances. The regularizer part keeps the batch moments as
    functions of both ``x`` and ``mu``: because the batch variance is measured
    around the learned mean, ``d var_bar / d mu = 2 (mu - mean_bar)``, which
    yields the ``-4 lambda2 (var - var_bar)(mu - mean_bar)`` coupling in
    ``d_mu``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    labels = np.asarray(labels, dtype=np.int64)
    n = len(labels)
    rows = np.arange(n)
    inv_var = np.exp(-params.log_var)

    logits, scale = _logits(x, labels, params, cfg)
    p = np.exp(logits - log_sum_exp(logits, axis=1)[:, None])
    p[rows, labels] -= 1.0
    # dL/d dist_ik; logit = -scale * (dist + const)
    g = -p * scale / n

    diff = x[:, None, :] - params.mu[None]  # (N, K, D)
    w = diff * inv_var[None]
    d_x = np.einsum("nk,nkd->nd", g, w)
    d_mu = -np.einsum("nk,nkd->kd", g, w)
    d_log_var = 0.5 * (g.sum(axis=0)[:, None] - np.einsum("nk,nkd->kd", g, diff * w))

    mom = batch_moments(x, labels, params)
    present = mom.present[:, None]
    a = np.where(present, params.mu - mom.mean, 0.0)
    var = params.var
    b = np.where(present, var - mom.var, 0.0)
    lam1, lam2 = cfg.lambda1, cfg.lambda2
    d_mu += 2 * lam1 * a - 4 * lam2 * b * a
    d_log_var += 2 * lam2 * b * var
    cnt = np.maximum(mom.count, 1)[labels][:, None]
    own = x - params.mu[labels]
    d_x += -(2 * lam1 * a[labels] + 4 * lam2 * b[labels] * own) / cnt
    return GradientBundle(d_x, d_mu, d_log_var)


def margin_boundary_check(sigma2_gt: float, sigma2_other: float, gamma: float) -> bool:
    """1-D, equal Mahalanobis terms, no inter-class margin: does the label win?"""
    if sigma2_gt <= 0 or sigma2_other <= 0:
        raise ValueError("variances must be positive")
    return sigma2_other - sigma2_gt > gamma * sigma2_gt
