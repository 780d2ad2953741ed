"""Numerical laboratory for eCDF-weighted self-supervised contrastive loss.

Importance weights for unlabeled negatives are computed from empirical
CDFs alone (no parametric score model), plugged into a weighted
contrastive loss, and benchmarked against biased, prior-corrected and
supervised estimators on a fully synthetic score generator.
"""

__version__ = "0.1.0"

from bcl.estimators import (
    Label,
    LabeledScore,
    ScoreBatch,
    contrastive_loss,
    theta_bcl,
    theta_biased,
    theta_dcl,
    theta_sup,
)
from bcl.weights import (
    Ecdf,
    MixtureParams,
    WeightVector,
    beta_from_classes,
    cdf_transform,
    importance_weight,
    posterior_tn,
    weight_batch,
)

__all__ = [
    "Ecdf",
    "Label",
    "LabeledScore",
    "MixtureParams",
    "ScoreBatch",
    "WeightVector",
    "__version__",
    "beta_from_classes",
    "cdf_transform",
    "contrastive_loss",
    "importance_weight",
    "posterior_tn",
    "theta_bcl",
    "theta_biased",
    "theta_dcl",
    "theta_sup",
    "weight_batch",
]
