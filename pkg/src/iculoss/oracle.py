"""Independent references: the Bayes classifier of a known diagonal Gaussian
mixture and a central-difference gradient checker.

Nothing here calls into the losses' own gradient code, so it can be used to
validate it.
"""

from dataclasses import dataclass

import numpy as np

from .rng import Rng


@dataclass
class TrueGmm:
    means: np.ndarray  # (K, D)
    vars: np.ndarray  # (K, D)
    priors: np.ndarray  # (K,)

    def __post_init__(self):
        self.means = np.array(self.means, dtype=np.float64, ndmin=2)
        self.vars = np.array(self.vars, dtype=np.float64, ndmin=2)
        self.priors = np.array(self.priors, dtype=np.float64)
        if self.means.shape != self.vars.shape or len(self.priors) != len(self.means):
            raise ValueError("inconsistent mixture shapes")
        if np.any(self.vars <= 0):
            raise ValueError("variances must be positive")
        if np.any(self.priors <= 0) or np.any(self.priors > 1):
            raise ValueError("priors must lie in (0, 1]")
        if abs(self.priors.sum() - 1.0) > 1e-12:
            raise ValueError("priors must sum to 1")

    @classmethod
    def equal_priors(cls, means, vars):
        k = len(np.atleast_2d(means))
        return cls(means, vars, np.full(k, 1.0 / k))

    def sample(self, n: int, rng: Rng):
        """Labels by inverse-CDF on the priors, then one normal block per sample."""
        cdf = np.cumsum(self.priors)
        labels = np.minimum(np.searchsorted(cdf, rng.uniform(n), side="right"), len(cdf) - 1)
        z = rng.normal(n * self.means.shape[1]).reshape(n, -1)
        return self.means[labels] + np.sqrt(self.vars[labels]) * z, labels


def bayes_log_scores(x, gmm: TrueGmm) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    diff = x[:, None, :] - gmm.means[None]
    maha = np.sum(diff * diff / gmm.vars[None], axis=2)
    return np.log(gmm.priors)[None] - 0.5 * (maha + np.log(gmm.vars).sum(axis=1)[None])


def bayes_predict(x, gmm: TrueGmm):
    single = np.ndim(x) == 1
    labels = np.argmax(bayes_log_scores(x, gmm), axis=1)
    return int(labels[0]) if single else labels


def bayes_accuracy(gmm: TrueGmm, n_samples: int, rng: Rng) -> float:
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    x, y = gmm.sample(n_samples, rng)
    return float(np.mean(bayes_predict(x, gmm) == y))


def finite_diff_gradient(scalar_fn, params_flat, eps: float = 1e-4) -> np.ndarray:
    """Central differences, one coordinate at a time."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.array(params_flat, dtype=np.float64)
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + eps
        fp = scalar_fn(p.copy())
        p[i] = orig - eps
        fm = scalar_fn(p.copy())
        p[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise FloatingPointError(f"non-finite function value at coordinate {i}")
        grad[i] = (fp - fm) / (2 * eps)
    return grad


@dataclass
class GradCheckReport:
    max_relative_error: float
    worst_coordinate: object
    passed: bool
    tolerance: float = 1e-5

    def __bool__(self):
        return self.passed


def grad_check(analytic, numeric, tol: float = 1e-5, names=None) -> GradCheckReport:
    a = np.asarray(analytic, dtype=np.float64).reshape(-1)
    n = np.asarray(numeric, dtype=np.float64).reshape(-1)
    if a.shape != n.shape:
        raise ValueError(f"length mismatch: {a.size} vs {n.size}")
    if a.size == 0:
        return GradCheckReport(0.0, None, True, tol)
    rel = np.abs(a - n) / np.maximum(1.0, np.maximum(np.abs(a), np.abs(n)))
    worst = int(np.argmax(rel))
    err = float(rel[worst])
    coord = names[worst] if names is not None else worst
    return GradCheckReport(err, coord, err <= tol, tol)
