"""Batch array adapter over the core weight and loss routines.

External training loops usually hold one positive score per anchor and
a contiguous B x N block of negative scores.  This layer validates that
layout, runs the core per-anchor routines row by row, and hands back
plain arrays: weights so host autodiff can apply them as detached
constants, and per-row losses.  Row i of every result equals the core
output for row i exactly; caller-owned arrays are never mutated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from bcl.estimators import ScoreBatch, contrastive_loss
from bcl.weights import MixtureParams, weight_batch

__version__ = "0.1.0"

__all__ = ["ArrayBatchView", "loss_for_batch", "weights_for_batch", "__version__"]


def _checked(name: str, arr: np.ndarray, ndim: int) -> np.ndarray:
    if not isinstance(arr, np.ndarray):
        raise ValueError(f"{name} must be a numpy array (got {type(arr).__name__})")
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D (got {arr.ndim}-D)")
    if arr.dtype != np.float64:
        raise ValueError(f"{name} must be float64 (got {arr.dtype})")
    if not arr.flags.c_contiguous:
        raise ValueError(f"{name} must be C-contiguous row-major")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    if np.any(arr <= 0.0):
        raise ValueError(f"{name} must be strictly positive")
    return arr


@dataclass(frozen=True)
class ArrayBatchView:
    """One batch of anchors: positive scores (B,), negatives (B, N),
    and the mixture scalars used for the weight computation."""

    pos_scores: np.ndarray
    neg_scores: np.ndarray
    alpha: float
    beta: float
    tau_pos: float

    def __post_init__(self) -> None:
        pos = _checked("pos_scores", self.pos_scores, 1)
        neg = _checked("neg_scores", self.neg_scores, 2)
        if pos.shape[0] != neg.shape[0]:
            raise ValueError(
                f"pos_scores length {pos.shape[0]} != neg_scores rows {neg.shape[0]}"
            )
        MixtureParams(self.alpha, self.beta, self.tau_pos)  # range validation

    @property
    def params(self) -> MixtureParams:
        return MixtureParams(self.alpha, self.beta, self.tau_pos)

    @property
    def batch_size(self) -> int:
        return int(self.neg_scores.shape[0])


def weights_for_batch(view: ArrayBatchView) -> np.ndarray:
    """Importance weights for every row, shape (B, N).

    Row i is exactly the core per-anchor computation on
    ``view.neg_scores[i]``; each row's empirical CDF spans only that
    row.  The result is a fresh array.
    """
    params = view.params
    out = np.empty_like(view.neg_scores)
    for i in range(view.batch_size):
        out[i] = weight_batch(view.neg_scores[i], params).weights
    return out


def loss_for_batch(view: ArrayBatchView) -> np.ndarray:
    """Weighted contrastive loss per row, shape (B,).

    Weights are computed internally exactly as :func:`weights_for_batch`
    does, then folded into the core scalar loss.
    """
    params = view.params
    out = np.empty(view.batch_size, dtype=np.float64)
    for i in range(view.batch_size):
        weights = weight_batch(view.neg_scores[i], params)
        out[i] = contrastive_loss(
            ScoreBatch(float(view.pos_scores[i]), view.neg_scores[i]), weights
        )
    return out
