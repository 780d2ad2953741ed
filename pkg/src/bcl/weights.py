"""Empirical-CDF driven importance weights for unlabeled negative scores.

Each unlabeled similarity score receives a weight equal to the density
ratio between a target population of (hard) true negatives and the
unlabeled mixture it was actually drawn from.  Because both populations
are mixtures of the min/max order statistics of the same base score
distribution, the ratio collapses to a function of the base cumulative
distribution function alone, which in turn is recovered from the
empirical CDF of the observed scores.  No parametric form of the score
distribution is ever assumed.

The chain for one anchor's scores is::

    scores -> eCDF fraction -> base-CDF via quadratic inversion -> weight

implemented by :class:`Ecdf`, :func:`cdf_transform` and
:func:`importance_weight`, and composed by :func:`weight_batch`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "MixtureParams",
    "Ecdf",
    "beta_from_classes",
    "cdf_transform",
    "importance_weight",
    "posterior_tn",
    "unlabeled_cdf_coefficients",
    "weight_batch",
    "WeightVector",
]

# Below this magnitude the quadratic coefficient is treated as zero and
# the exact linear limit is used instead.
_DEGENERATE_A = 1e-12

# Allowed numerical excursion of the inverted CDF outside [0, 1] before
# the inversion is considered internally inconsistent.
_CDF_SLACK = 1e-9


@dataclass(frozen=True)
class MixtureParams:
    """Parameters of the two-population score mixture.

    alpha    -- probability the encoder scores a positive above a negative
                (its AUC); 0.5 is a random encoder, 1.0 a perfect one.
    beta     -- emphasis on the hard-negative component of the target
                population; 0.5 means no hard-negative mining.
    tau_pos  -- prior probability that an unlabeled sample shares the
                anchor's class (is a false negative).

    Validation is strict: out-of-range values are rejected, not clamped.
    """

    alpha: float
    beta: float
    tau_pos: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.alpha) and 0.5 <= self.alpha <= 1.0):
            raise ValueError(f"alpha must be in [0.5, 1] (got {self.alpha})")
        if not (math.isfinite(self.beta) and 0.5 <= self.beta <= 1.0):
            raise ValueError(f"beta must be in [0.5, 1] (got {self.beta})")
        if not (math.isfinite(self.tau_pos) and 0.0 < self.tau_pos < 1.0):
            raise ValueError(
                f"tau-pos must be in (0, 1) exclusive (got {self.tau_pos})"
            )
        if self.alpha == 1.0 and self.beta == 1.0:
            # the hard component has zero mass for a perfect encoder, so
            # sampling only it leaves an empty target population
            raise ValueError("alpha = 1 together with beta = 1 is degenerate")

    @property
    def tau_neg(self) -> float:
        """Prior probability of a true negative: exactly 1 - tau_pos."""
        return 1.0 - self.tau_pos


def beta_from_classes(n_classes: int) -> float:
    """Heuristic hard-negative emphasis for a balanced dataset: 1 - 1/C.

    More classes mean a smaller positive-class prior, which shifts the
    burden from false-negative debiasing to hard-negative mining.
    """
    if n_classes < 2:
        raise ValueError(f"n_classes must be >= 2 (got {n_classes})")
    return 1.0 - 1.0 / n_classes


@dataclass(frozen=True)
class Ecdf:
    """Empirical CDF over a score sample, with inclusive (<=) queries.

    Stores a sorted copy of the sample; ties are kept with multiplicity.
    Queries cost O(log n) via binary search.
    """

    values: np.ndarray
    n: int = field(init=False)

    def __post_init__(self) -> None:
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim != 1 or arr.size == 0:
            raise ValueError("eCDF needs a non-empty 1-D sample")
        if not np.all(np.isfinite(arr)):
            raise ValueError("eCDF sample must be finite")
        arr = np.sort(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "values", arr)
        object.__setattr__(self, "n", int(arr.size))

    @classmethod
    def from_sample(cls, values) -> "Ecdf":
        return cls(values)

    def count_at_or_below(self, query):
        """Number of stored values <= query (scalar or array query)."""
        q = np.asarray(query, dtype=np.float64)
        if not np.all(np.isfinite(q)):
            raise ValueError("eCDF query must be finite")
        counts = np.searchsorted(self.values, q, side="right")
        return int(counts) if q.ndim == 0 else counts

    def evaluate(self, query):
        """Fraction of stored values <= query, in {0, 1/n, ..., 1}."""
        return self.count_at_or_below(query) / self.n

    __call__ = evaluate


def unlabeled_cdf_coefficients(params: MixtureParams) -> tuple[float, float]:
    """Coefficients (a, b) of the quadratic linking the two CDFs.

    With F the base-score CDF and G the unlabeled-score CDF,
    G = a*F**2 + b*F, where a = (1-2*alpha)*(tau_neg - tau_pos) and
    b = 2*(alpha*tau_neg + (1-alpha)*tau_pos).  a + b = 1, so the
    endpoints 0 and 1 are fixed points.
    """
    a = (1.0 - 2.0 * params.alpha) * (params.tau_neg - params.tau_pos)
    b = 2.0 * (params.alpha * params.tau_neg + (1.0 - params.alpha) * params.tau_pos)
    return a, b


def cdf_transform(phi_un, params: MixtureParams):
    """Recover the base-score CDF value from an unlabeled-CDF value.

    Inverts G = a*F**2 + b*F on [0, 1].  The admissible root
    (-b + sqrt(b**2 + 4*a*G)) / (2*a) is evaluated in the equivalent
    subtraction-free form 2*G / (b + sqrt(b**2 + 4*a*G)), which stays
    accurate as a -> 0; below ``1e-12`` the exact linear limit G / b is
    used.  Inputs 0 and 1 map to 0 and 1 exactly.

    Accepts a scalar or an array in [0, 1]; returns the same shape.
    """
    q = np.asarray(phi_un, dtype=np.float64)
    if not np.all(np.isfinite(q)):
        raise ValueError("CDF value must be finite")
    if np.any(q < 0.0) or np.any(q > 1.0):
        raise ValueError("CDF value must lie in [0, 1]")

    a, b = unlabeled_cdf_coefficients(params)
    if abs(a) < _DEGENERATE_A:
        root = q / b
    else:
        root = 2.0 * q / (b + np.sqrt(b * b + 4.0 * a * q))
    # a + b = 1 only up to rounding, so pin the fixed points explicitly.
    root = np.where(q == 0.0, 0.0, root)
    root = np.where(q == 1.0, 1.0, root)

    if np.any(root < -_CDF_SLACK) or np.any(root > 1.0 + _CDF_SLACK):
        raise RuntimeError(
            "CDF inversion left [0, 1]; inconsistent mixture parameters"
        )
    root = np.clip(root, 0.0, 1.0)
    return float(root) if root.ndim == 0 else root


def _mixture_denominator(phi, params: MixtureParams):
    """Unlabeled density divided by twice the base density, as a function
    of the base CDF value.  Linear in phi and strictly positive on [0, 1]
    for valid parameters (its endpoint values are alpha*tau_neg +
    (1-alpha)*tau_pos and (1-alpha)*tau_neg + alpha*tau_pos)."""
    return (
        params.alpha * params.tau_neg
        + (1.0 - params.alpha) * params.tau_pos
        + (1.0 - 2.0 * params.alpha) * phi * (params.tau_neg - params.tau_pos)
    )


def posterior_tn(phi, params: MixtureParams):
    """Posterior probability that a score is a true negative, given the
    base CDF value of the score.

    High CDF values (scores close to the positive) lower the posterior;
    for a random encoder (alpha = 0.5) it reduces to the prior tau_neg.
    """
    p = np.asarray(phi, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
        raise ValueError("CDF value must lie in [0, 1]")
    numer = params.tau_neg * (
        params.alpha + (1.0 - 2.0 * params.alpha) * p
    )
    denom = _mixture_denominator(p, params)
    if np.any(denom <= 0.0):
        raise RuntimeError("mixture denominator not positive; invalid parameters")
    out = numer / denom
    return float(out) if out.ndim == 0 else out


def importance_weight(phi, params: MixtureParams):
    """Importance weight for an unlabeled score with base CDF value phi.

    Density ratio of the normalized hard-true-negative target population
    to the unlabeled population.  The normalization constant of the
    target is z = (1-beta)*alpha + beta*(1-alpha).  Finite and
    non-negative for all valid parameters; identically 1 when
    alpha = beta = 0.5 (no information, no reweighting).
    """
    p = np.asarray(phi, dtype=np.float64)
    if np.any(p < 0.0) or np.any(p > 1.0) or not np.all(np.isfinite(p)):
        raise ValueError("CDF value must lie in [0, 1]")
    z = (1.0 - params.beta) * params.alpha + params.beta * (1.0 - params.alpha)
    numer = (1.0 - params.beta) * params.alpha + (params.beta - params.alpha) * p
    denom = _mixture_denominator(p, params)
    out = numer / (z * denom)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class WeightVector:
    """Per-negative importance weights, aligned with one anchor's scores."""

    weights: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.weights, dtype=np.float64)
        if arr.ndim != 1:
            raise ValueError("weights must be 1-D")
        if not np.all(np.isfinite(arr)) or np.any(arr < 0.0):
            raise ValueError("weights must be finite and >= 0")
        arr = arr.copy()
        arr.flags.writeable = False
        object.__setattr__(self, "weights", arr)

    def __len__(self) -> int:
        return int(self.weights.size)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.weights, dtype=dtype)


def weight_batch(
    neg_scores,
    params: MixtureParams,
    *,
    ecdf: Ecdf | None = None,
    midpoint: bool = False,
) -> WeightVector:
    """Importance weights for one anchor's unlabeled scores.

    By default the empirical CDF is built over exactly these scores, so
    only their ranks matter: any strictly increasing transform of the
    scores yields identical weights, and tied scores get equal weights.
    Pass a prebuilt ``ecdf`` (e.g. pooled over a whole batch) to
    experiment with a different reference sample.  ``midpoint`` switches
    the plotting position from rank/n to (rank - 0.5)/n.
    """
    arr = np.asarray(neg_scores, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("neg_scores must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError("scores must be finite and > 0")

    ref = Ecdf(arr) if ecdf is None else ecdf
    counts = ref.count_at_or_below(arr)
    if midpoint:
        phi_un = (counts - 0.5) / ref.n
    else:
        phi_un = counts / ref.n
    phi = cdf_transform(phi_un, params)
    return WeightVector(importance_weight(phi, params))
