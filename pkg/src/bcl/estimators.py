"""Contrastive losses and point estimators of the true-negative mean score.

All operations are pure; score containers are immutable after
construction.  Sums accumulate left-to-right over the stored order so
repeated runs are bit-reproducible.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "Label",
    "LabeledScore",
    "ScoreBatch",
    "contrastive_loss",
    "ordered_sum",
    "theta_bcl",
    "theta_biased",
    "theta_dcl",
    "theta_sup",
]


class Label(enum.Enum):
    """Ground-truth class of an unlabeled sample relative to its anchor."""

    TN = "TN"
    FN = "FN"


@dataclass(frozen=True)
class LabeledScore:
    """A similarity score tagged with its ground-truth label."""

    value: float
    label: Label

    def __post_init__(self) -> None:
        if not (math.isfinite(self.value) and self.value > 0.0):
            raise ValueError(f"score must be finite and > 0 (got {self.value})")
        if not isinstance(self.label, Label):
            raise ValueError(f"label must be a Label (got {self.label!r})")


def _positive_scores(values, name: str) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} must be a non-empty 1-D sequence")
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0.0):
        raise ValueError(f"{name} must contain finite values > 0")
    return arr


@dataclass(frozen=True)
class ScoreBatch:
    """One anchor's positive score and its unlabeled negative scores.

    Scores enter already exponentiated (exp(sim/t)); the temperature
    mapping lives with whatever produced them.  ``extra_pos_scores``
    carries additional positive draws for estimators that need them.
    """

    pos_score: float
    neg_scores: np.ndarray
    extra_pos_scores: np.ndarray | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.pos_score) and self.pos_score > 0.0):
            raise ValueError(f"pos_score must be finite and > 0 (got {self.pos_score})")
        negs = _positive_scores(self.neg_scores, "neg_scores")
        negs.flags.writeable = False
        object.__setattr__(self, "neg_scores", negs)
        if self.extra_pos_scores is not None:
            extras = _positive_scores(self.extra_pos_scores, "extra_pos_scores")
            extras.flags.writeable = False
            object.__setattr__(self, "extra_pos_scores", extras)

    @property
    def n(self) -> int:
        return int(self.neg_scores.size)


def ordered_sum(values) -> float:
    """Sum in left-to-right order over the stored sequence.

    cumsum accumulates sequentially, so this matches a plain running
    total and is reproducible bit-for-bit.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.size == 0:
        return 0.0
    return float(np.cumsum(arr)[-1])


def contrastive_loss(batch: ScoreBatch, weights) -> float:
    """Weighted softmax-style contrastive loss for one anchor.

    Returns -log(pos / (pos + sum_i w_i * neg_i)).  Unit weights give
    the plain loss over unlabeled negatives; zero weights remove the
    negative term entirely and the loss is exactly 0.
    """
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != batch.neg_scores.shape:
        raise ValueError(
            f"weights length {w.size} != neg_scores length {batch.n}"
        )
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise ValueError("weights must be finite and >= 0")
    weighted = ordered_sum(w * batch.neg_scores)
    return math.log1p(weighted / batch.pos_score)


def theta_biased(neg_scores) -> float:
    """Arithmetic mean of the unlabeled scores (no correction)."""
    arr = _positive_scores(neg_scores, "neg_scores")
    return ordered_sum(arr) / arr.size


def theta_dcl(neg_scores, extra_pos_scores, tau_pos: float, *, floor: float | None = None) -> float:
    """Prior-corrected mean: subtract the expected false-negative mass.

    Computes (sum(neg) - n * tau_pos * mean(extra_pos)) / (n * tau_neg).
    The correction can overshoot and the result may be negative; no
    clamp is applied unless ``floor`` is given.
    """
    negs = _positive_scores(neg_scores, "neg_scores")
    extras = _positive_scores(extra_pos_scores, "extra_pos_scores")
    if not (math.isfinite(tau_pos) and 0.0 <= tau_pos < 1.0):
        raise ValueError(f"tau-pos must be in [0, 1) (got {tau_pos})")
    n = negs.size
    pos_mean = ordered_sum(extras) / extras.size
    value = (ordered_sum(negs) - n * tau_pos * pos_mean) / (n * (1.0 - tau_pos))
    if floor is not None and value < floor:
        return floor
    return value


def theta_bcl(neg_scores, weights) -> float:
    """Importance-weighted mean of the unlabeled scores."""
    negs = _positive_scores(neg_scores, "neg_scores")
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != negs.shape:
        raise ValueError(f"weights length {w.size} != neg_scores length {negs.size}")
    if not np.all(np.isfinite(w)) or np.any(w < 0.0):
        raise ValueError("weights must be finite and >= 0")
    return ordered_sum(w * negs) / negs.size


def theta_sup(labeled_scores) -> float:
    """Supervised oracle: mean score over the true-negative subset."""
    total = 0.0
    count = 0
    for item in labeled_scores:
        if not isinstance(item, LabeledScore):
            raise ValueError(f"expected LabeledScore, got {item!r}")
        if item.label is Label.TN:
            total += item.value
            count += 1
    if count == 0:
        raise ValueError(
            "no true-negative samples: the supervised mean is undefined"
        )
    return total / count
