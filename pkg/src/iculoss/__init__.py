"""Intra-class uncertainty (ICU) loss: Gaussian decision distances with
learned per-class variances, moment-matching regularisation and margins,
plus softmax, center-loss and L-GM baselines."""

from .head import (
    BatchMoments,
    ClassGaussians,
    GradientBundle,
    LossOutput,
    MarginConfig,
    batch_moments,
    decision_distance,
    icu_loss_backward,
    icu_loss_forward,
    margin_boundary_check,
    posterior,
    predict,
    regularizer,
)
from .rng import Rng, log_sum_exp, sample_standard_normal, seeded_shuffle

__version__ = "0.1.0"

__all__ = [
    "BatchMoments", "ClassGaussians", "GradientBundle", "LossOutput", "MarginConfig",
    "batch_moments", "decision_distance", "icu_loss_backward", "icu_loss_forward",
    "margin_boundary_check", "posterior", "predict", "regularizer",
    "Rng", "log_sum_exp", "sample_standard_normal", "seeded_shuffle",
]
