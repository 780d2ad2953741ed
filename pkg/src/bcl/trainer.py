"""Desk-scale contrastive trainer with manual backpropagation.

A small feed-forward encoder maps inputs to a sphere of radius 1/t;
similarity scores are exp of embedding dot products.  The loss is the
weighted contrastive loss with the importance weights treated as
constants: gradients flow through the scores but never through the
weights (the empirical CDF underneath them is non-differentiable
anyway).  Training is plain SGD on synthetic Gaussian blobs, with
positives built by noise augmentation and negatives drawn uniformly
from the pool without using labels.  Labels feed only the oracle
metrics: the encoder-quality estimate (AUC over a held-out labeled
slice) and a ridge linear probe.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, replace

import numpy as np

from bcl.estimators import ordered_sum
from bcl.weights import MixtureParams, weight_batch

__all__ = [
    "EncoderParams",
    "EpochMetrics",
    "Gradients",
    "SyntheticDataset",
    "TrainConfig",
    "encode",
    "load_params",
    "loss_and_grad",
    "save_params",
    "train",
    "write_metrics_csv",
]

_NORM_FLOOR = 1e-30  # keeps the all-zero activation from dividing by zero


@dataclass
class EncoderParams:
    """Feed-forward encoder weights: tanh hidden layers, then a linear
    layer whose output is L2-normalized and scaled to radius 1/t."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]
    t: float

    def __post_init__(self) -> None:
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ValueError("weights and biases must pair up, one per layer")
        for w, b in zip(self.weights, self.biases):
            if w.ndim != 2 or b.ndim != 1 or w.shape[0] != b.shape[0]:
                raise ValueError("layer shapes inconsistent")
        if not (math.isfinite(self.t) and self.t > 0.0):
            raise ValueError(f"t must be > 0 (got {self.t})")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @classmethod
    def init_random(
        cls, layer_sizes: tuple[int, ...], t: float, rng: np.random.Generator
    ) -> "EncoderParams":
        """Gaussian init scaled by 1/sqrt(fan_in)."""
        weights = []
        biases = []
        for fan_in, fan_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(rng.standard_normal((fan_out, fan_in)) / math.sqrt(fan_in))
            biases.append(np.zeros(fan_out))
        return cls(tuple(weights), tuple(biases), t)

    def copy(self) -> "EncoderParams":
        return EncoderParams(
            tuple(w.copy() for w in self.weights),
            tuple(b.copy() for b in self.biases),
            self.t,
        )


@dataclass(frozen=True)
class Gradients:
    """Parameter gradients, shaped exactly like :class:`EncoderParams`."""

    weights: tuple[np.ndarray, ...]
    biases: tuple[np.ndarray, ...]


def _forward(params: EncoderParams, points: np.ndarray):
    """Forward pass for a matrix of points; returns embeddings and the
    per-layer activations needed for backprop."""
    acts = [points]
    z_last = points
    n_layers = len(params.weights)
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        z = acts[-1] @ w.T + b
        if i < n_layers - 1:
            acts.append(np.tanh(z))
        else:
            z_last = z
    norms = np.sqrt(np.sum(z_last * z_last, axis=1))
    safe = np.maximum(norms, _NORM_FLOOR)
    emb = z_last / (params.t * safe)[:, None]
    return emb, acts, z_last, safe


def _backward(
    params: EncoderParams,
    acts: list[np.ndarray],
    z_last: np.ndarray,
    safe_norms: np.ndarray,
    grad_emb: np.ndarray,
) -> Gradients:
    zhat = z_last / safe_norms[:, None]
    radial = np.sum(zhat * grad_emb, axis=1)
    grad_z = (grad_emb - zhat * radial[:, None]) / (params.t * safe_norms)[:, None]

    grad_w: list[np.ndarray] = []
    grad_b: list[np.ndarray] = []
    for i in range(len(params.weights) - 1, -1, -1):
        grad_w.append(grad_z.T @ acts[i])
        grad_b.append(grad_z.sum(axis=0))
        if i > 0:
            grad_a = grad_z @ params.weights[i]
            grad_z = (1.0 - acts[i] * acts[i]) * grad_a
    grad_w.reverse()
    grad_b.reverse()
    return Gradients(tuple(grad_w), tuple(grad_b))


def encode(params: EncoderParams, x) -> np.ndarray:
    """Map one point or a matrix of points to the 1/t sphere."""
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    if single:
        arr = arr[None, :]
    if arr.shape[1] != params.layer_sizes[0]:
        raise ValueError(
            f"input dimension {arr.shape[1]} != encoder input {params.layer_sizes[0]}"
        )
    emb, _, _, _ = _forward(params, arr)
    return emb[0] if single else emb


def loss_and_grad(
    params: EncoderParams,
    anchor,
    positive,
    negatives,
    mixture: MixtureParams,
    *,
    unit_weights: bool = False,
    weights_override=None,
):
    """Weighted contrastive loss for one anchor and its full gradient.

    Scores are exp of embedding dot products; importance weights are
    computed from the negative scores and then held constant, so the
    gradient has the loss-derivative coefficients w*score/total on each
    negative path and score_pos/total - 1 on the positive path.  Pass
    ``unit_weights=True`` for the plain (biased) loss, or
    ``weights_override`` to pin the weights explicitly.
    """
    anchor = np.asarray(anchor, dtype=np.float64)
    positive = np.asarray(positive, dtype=np.float64)
    negatives = np.asarray(negatives, dtype=np.float64)
    if negatives.ndim != 2 or negatives.shape[0] < 1:
        raise ValueError("negatives must be a non-empty matrix of points")

    points = np.vstack([anchor[None, :], positive[None, :], negatives])
    emb, acts, z_last, safe = _forward(params, points)
    e_anchor, e_pos, e_neg = emb[0], emb[1], emb[2:]

    s_pos = float(e_anchor @ e_pos)
    s_neg = e_neg @ e_anchor
    xhat_pos = math.exp(s_pos)
    xhat_neg = np.exp(s_neg)
    for name, val in (("pos_score", xhat_pos), ("neg_scores", xhat_neg)):
        if not np.all(np.isfinite(val)):
            raise RuntimeError(f"non-finite {name} in loss evaluation")

    if weights_override is not None:
        w = np.asarray(weights_override, dtype=np.float64)
        if w.shape != xhat_neg.shape:
            raise ValueError("weights_override must align with the negatives")
    elif unit_weights:
        w = np.ones_like(xhat_neg)
    else:
        w = weight_batch(xhat_neg, mixture).weights

    weighted = ordered_sum(w * xhat_neg)
    total = xhat_pos + weighted
    loss = math.log1p(weighted / xhat_pos)

    coef_pos = xhat_pos / total - 1.0
    coef_neg = (w * xhat_neg) / total

    grad_emb = np.empty_like(emb)
    grad_emb[0] = coef_pos * e_pos + coef_neg @ e_neg
    grad_emb[1] = coef_pos * e_anchor
    grad_emb[2:] = coef_neg[:, None] * e_anchor[None, :]

    grads = _backward(params, acts, z_last, safe, grad_emb)
    return loss, grads


@dataclass(frozen=True)
class SyntheticDataset:
    """Labeled point cloud; labels exist for oracles, not for the loss."""

    points: np.ndarray
    labels: np.ndarray
    n_classes: int

    def __post_init__(self) -> None:
        points = np.asarray(self.points, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if points.ndim != 2 or labels.ndim != 1:
            raise ValueError("points must be 2-D and labels 1-D")
        if points.shape[0] != labels.shape[0]:
            raise ValueError("points and labels must align")
        if self.n_classes < 2:
            raise ValueError("need at least 2 classes")
        points.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def gaussian_blobs(
        cls,
        n_classes: int,
        per_class: int,
        dim: int,
        *,
        separation: float = 4.0,
        cluster_sd: float = 0.5,
        seed: int = 0,
    ) -> "SyntheticDataset":
        """Isotropic Gaussian blobs with centers of norm ``separation``."""
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        centers = rng.standard_normal((n_classes, dim))
        centers *= separation / np.linalg.norm(centers, axis=1, keepdims=True)
        points = np.vstack(
            [c + cluster_sd * rng.standard_normal((per_class, dim)) for c in centers]
        )
        labels = np.repeat(np.arange(n_classes), per_class)
        return cls(points, labels, n_classes)


@dataclass(frozen=True)
class TrainConfig:
    mixture: MixtureParams
    epochs: int
    learning_rate: float
    anchors_per_step: int
    n_negatives: int
    noise_scale: float
    seed: int
    hidden_sizes: tuple[int, ...] = (16,)
    embed_dim: int = 8
    t: float = 0.5
    unit_weights: bool = False   # plain (biased) loss instead of reweighted
    estimate_alpha: bool = True  # refresh alpha from the probe slice each epoch
    probe_fraction: float = 0.25
    probe_anchors: int = 32

    def __post_init__(self) -> None:
        if self.learning_rate < 0.0 or not math.isfinite(self.learning_rate):
            raise ValueError(f"learning rate must be >= 0 (got {self.learning_rate})")
        if self.epochs < 1 or self.anchors_per_step < 1 or self.n_negatives < 1:
            raise ValueError("epochs, anchors_per_step and n (negatives) must be >= 1")
        if not (0.0 < self.probe_fraction < 1.0):
            raise ValueError("probe_fraction must be in (0, 1)")


@dataclass(frozen=True)
class EpochMetrics:
    epoch: int
    loss: float
    alpha_hat: float
    probe_accuracy: float


def _estimate_alpha_probe(params, points, labels, rng, config) -> float:
    """Encoder AUC on labeled probe anchors: positive score from an
    augmented view against scores of true negatives (different label).
    Clamped into [0.5, 1] so early random encoders stay in range."""
    idx = rng.choice(points.shape[0], size=min(config.probe_anchors, points.shape[0]), replace=False)
    aucs = []
    for i in idx:
        other = np.flatnonzero(labels != labels[i])
        if other.size == 0:
            continue
        neg_idx = rng.choice(other, size=min(32, other.size), replace=False)
        pool = np.vstack([points[i][None, :], points[i] + config.noise_scale * rng.standard_normal(points.shape[1]), points[neg_idx]])
        emb = encode(params, pool)
        pos_score = float(emb[0] @ emb[1])
        neg_scores = emb[2:] @ emb[0]
        aucs.append(float(np.mean(pos_score >= neg_scores)))
    if not aucs:
        return 0.5
    return float(min(max(np.mean(aucs), 0.5), 1.0))


def _linear_probe_accuracy(params, train_points, train_labels, eval_points, eval_labels, n_classes) -> float:
    """Closed-form ridge probe on embeddings, evaluated on held-out points."""
    emb_train = encode(params, train_points)
    emb_eval = encode(params, eval_points)
    ones = np.ones((emb_train.shape[0], 1))
    design = np.hstack([emb_train, ones])
    onehot = np.eye(n_classes)[train_labels]
    gram = design.T @ design + 1e-3 * np.eye(design.shape[1])
    coef = np.linalg.solve(gram, design.T @ onehot)
    pred = np.argmax(np.hstack([emb_eval, np.ones((emb_eval.shape[0], 1))]) @ coef, axis=1)
    return float(np.mean(pred == eval_labels))


def train(dataset: SyntheticDataset, config: TrainConfig):
    """SGD over contrastive batches; returns (params, per-epoch metrics).

    Raises RuntimeError naming the epoch if the loss turns non-finite.
    """
    rng = np.random.default_rng(np.random.SeedSequence(config.seed))
    n_points = dataset.points.shape[0]
    order = rng.permutation(n_points)
    n_probe = max(2, int(round(config.probe_fraction * n_points)))
    probe_idx = order[:n_probe]
    train_idx = order[n_probe:]
    if train_idx.size < 2:
        raise ValueError("dataset too small for the requested probe fraction")

    sizes = (dataset.points.shape[1],) + tuple(config.hidden_sizes) + (config.embed_dim,)
    params = EncoderParams.init_random(sizes, config.t, rng)

    metrics: list[EpochMetrics] = []
    mixture = config.mixture
    for epoch in range(config.epochs):
        if config.estimate_alpha and not config.unit_weights:
            alpha_hat = _estimate_alpha_probe(
                params, dataset.points[probe_idx], dataset.labels[probe_idx], rng, config
            )
            mixture = replace(config.mixture, alpha=alpha_hat)
        else:
            alpha_hat = mixture.alpha

        perm = rng.permutation(train_idx)
        losses = []
        for start in range(0, perm.size - config.anchors_per_step + 1, config.anchors_per_step):
            step_anchors = perm[start : start + config.anchors_per_step]
            acc: Gradients | None = None
            for i in step_anchors:
                x = dataset.points[i]
                positive = x + config.noise_scale * rng.standard_normal(x.shape[0])
                neg_idx = rng.choice(train_idx, size=config.n_negatives, replace=True)
                try:
                    loss, grads = loss_and_grad(
                        params,
                        x,
                        positive,
                        dataset.points[neg_idx],
                        mixture,
                        unit_weights=config.unit_weights,
                    )
                except RuntimeError as exc:
                    raise RuntimeError(f"training diverged at epoch {epoch}: {exc}") from exc
                if not math.isfinite(loss):
                    raise RuntimeError(f"training diverged at epoch {epoch}: non-finite loss")
                losses.append(loss)
                if acc is None:
                    acc = grads
                else:
                    acc = Gradients(
                        tuple(a + g for a, g in zip(acc.weights, grads.weights)),
                        tuple(a + g for a, g in zip(acc.biases, grads.biases)),
                    )
            scale = config.learning_rate / step_anchors.size
            params = EncoderParams(
                tuple(w - scale * g for w, g in zip(params.weights, acc.weights)),
                tuple(b - scale * g for b, g in zip(params.biases, acc.biases)),
                params.t,
            )

        probe_acc = _linear_probe_accuracy(
            params,
            dataset.points[train_idx],
            dataset.labels[train_idx],
            dataset.points[probe_idx],
            dataset.labels[probe_idx],
            dataset.n_classes,
        )
        metrics.append(EpochMetrics(epoch, float(np.mean(losses)), alpha_hat, probe_acc))
    return params, metrics


def write_metrics_csv(metrics: list[EpochMetrics], path) -> None:
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["epoch", "loss", "alpha_hat", "probe_accuracy"])
        for m in metrics:
            writer.writerow([m.epoch, repr(m.loss), repr(m.alpha_hat), repr(m.probe_accuracy)])


# Checkpoint layout: int64 layer count, int64 (rows, cols) per layer,
# float64 t, then row-major float64 weight matrices each followed by the
# layer bias.  Everything little-endian.

def save_params(params: EncoderParams, path) -> None:
    with open(path, "wb") as handle:
        handle.write(struct.pack("<q", len(params.weights)))
        for w in params.weights:
            handle.write(struct.pack("<qq", w.shape[0], w.shape[1]))
        handle.write(struct.pack("<d", params.t))
        for w, b in zip(params.weights, params.biases):
            handle.write(np.ascontiguousarray(w, dtype="<f8").tobytes())
            handle.write(np.ascontiguousarray(b, dtype="<f8").tobytes())


def load_params(path) -> EncoderParams:
    with open(path, "rb") as handle:
        (n_layers,) = struct.unpack("<q", handle.read(8))
        shapes = [struct.unpack("<qq", handle.read(16)) for _ in range(n_layers)]
        (t,) = struct.unpack("<d", handle.read(8))
        weights = []
        biases = []
        for rows, cols in shapes:
            w = np.frombuffer(handle.read(8 * rows * cols), dtype="<f8").reshape(rows, cols)
            b = np.frombuffer(handle.read(8 * rows), dtype="<f8")
            weights.append(w.astype(np.float64))
            biases.append(b.astype(np.float64))
    return EncoderParams(tuple(weights), tuple(biases), t)
