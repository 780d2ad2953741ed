"""Generative simulation of similarity scores for unlabeled samples.

Scores are produced anchor by anchor: each anchor owns a proposal
distribution (optionally a randomly slid uniform interval), every one of
its N samples is labeled false-negative with probability ``tau_pos`` and
true-negative otherwise, the raw score is drawn from the matching
class-conditional density by accept-reject sampling, and finally mapped
through exp(score / t).  Ground-truth labels are retained so estimators
can be scored against a supervised oracle.

The class conditionals are mixtures of the min/max order statistics of
two draws from the proposal: a true negative is the minimum of the pair
with probability ``alpha`` (the encoder ranks it below the positive) and
the maximum otherwise; a false negative mirrors this.  Closed-form
densities and CDFs of those mixtures are provided for verification.
"""

from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy import special

from bcl.estimators import Label, LabeledScore
from bcl.weights import MixtureParams

__all__ = [
    "AnchorScores",
    "NormalProposal",
    "SamplingError",
    "SimConfig",
    "UniformProposal",
    "acceptance_probability",
    "default_config",
    "estimate_alpha_auc",
    "estimate_alpha_from_batch",
    "export_batch_csv",
    "generate_batch",
    "mapped_mixture_cdf",
    "mixture_cdf",
    "mixture_density",
    "paired_concordance",
    "sample_conditional",
    "sample_score_pairs",
    "snapshot_config",
]


class SamplingError(RuntimeError):
    """Accept-reject sampling failed to produce a draw within the cap."""


# Rounds of vectorized proposal draws before giving up.  Acceptance is at
# least 1/(2*alpha) >= 1/2 per proposal in expectation, so this is
# unreachable for valid parameters; it guards corrupted ones.
_MAX_REJECTION_ROUNDS = 1_000_000


@dataclass(frozen=True)
class NormalProposal:
    """Gaussian proposal for raw scores; support is unbounded."""

    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.mean) and math.isfinite(self.sd) and self.sd > 0):
            raise ValueError("normal proposal needs finite mean and sd > 0")

    def pdf(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.sd
        return np.exp(-0.5 * z * z) / (self.sd * math.sqrt(2.0 * math.pi))

    def cdf(self, x):
        z = (np.asarray(x, dtype=np.float64) - self.mean) / self.sd
        return 0.5 * (1.0 + special.erf(z / math.sqrt(2.0)))

    def sample(self, rng: np.random.Generator, size=None):
        return rng.normal(self.mean, self.sd, size)

    def support(self) -> tuple[float, float]:
        return (-np.inf, np.inf)

    def for_anchor(self, rng: np.random.Generator, t: float) -> "NormalProposal":
        """Anchors share the same Gaussian; nothing is slid."""
        return self


@dataclass(frozen=True)
class UniformProposal:
    """Uniform proposal on [lo, hi] with optional per-anchor sliding.

    ``slide`` in [0, 1] scales how far the interval may shift inside the
    legal score range [-1/t**2, 1/t**2]: each anchor draws u ~ U(-1, 1)
    and moves the interval by u * slide * headroom, where headroom is the
    distance to the right border for u >= 0 and to the left border
    otherwise.
    """

    lo: float = -0.5
    hi: float = 0.5
    slide: float = 0.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo <= self.hi):
            raise ValueError(f"uniform proposal needs lo <= hi (got [{self.lo}, {self.hi}])")
        if not (0.0 <= self.slide <= 1.0):
            raise ValueError(f"slide must be in [0, 1] (got {self.slide})")

    def pdf(self, x):
        arr = np.asarray(x, dtype=np.float64)
        inside = (arr >= self.lo) & (arr <= self.hi)
        return np.where(inside, 1.0 / (self.hi - self.lo), 0.0)

    def cdf(self, x):
        arr = np.asarray(x, dtype=np.float64)
        return np.clip((arr - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def sample(self, rng: np.random.Generator, size=None):
        return rng.uniform(self.lo, self.hi, size)

    def support(self) -> tuple[float, float]:
        return (self.lo, self.hi)

    def for_anchor(self, rng: np.random.Generator, t: float) -> "UniformProposal":
        """Slide the interval for one anchor, staying inside the legal range."""
        bound = 1.0 / (t * t)
        u = rng.uniform(-1.0, 1.0)
        if u >= 0.0:
            shift = u * self.slide * (bound - self.hi)
        else:
            shift = u * self.slide * (self.lo + bound)
        lo = min(max(self.lo + shift, -bound), bound)
        hi = min(max(self.hi + shift, -bound), bound)
        return UniformProposal(lo, hi, self.slide)


Proposal = NormalProposal | UniformProposal


@dataclass(frozen=True)
class SimConfig:
    """Full description of one simulated score batch."""

    mixture: MixtureParams
    proposal: Proposal
    t: float
    n_anchors: int
    n_negatives: int
    seed: int

    def __post_init__(self) -> None:
        if not (math.isfinite(self.t) and self.t > 0.0):
            raise ValueError(f"t must be > 0 (got {self.t})")
        if self.n_anchors < 1:
            raise ValueError(f"m (anchor count) must be >= 1 (got {self.n_anchors})")
        if self.n_negatives < 1:
            raise ValueError(f"n (negatives per anchor) must be >= 1 (got {self.n_negatives})")
        if isinstance(self.proposal, UniformProposal):
            bound = 1.0 / (self.t * self.t)
            if self.proposal.lo < -bound or self.proposal.hi > bound:
                raise ValueError(
                    f"uniform interval [{self.proposal.lo}, {self.proposal.hi}] "
                    f"exceeds the legal score range [{-bound}, {bound}] for t={self.t}"
                )

    def to_dict(self) -> dict:
        prop: dict
        if isinstance(self.proposal, UniformProposal):
            prop = {
                "kind": "uniform",
                "lo": self.proposal.lo,
                "hi": self.proposal.hi,
                "slide": self.proposal.slide,
            }
        else:
            prop = {"kind": "normal", "mean": self.proposal.mean, "sd": self.proposal.sd}
        return {
            "alpha": self.mixture.alpha,
            "beta": self.mixture.beta,
            "tau_pos": self.mixture.tau_pos,
            "proposal": prop,
            "t": self.t,
            "m": self.n_anchors,
            "n": self.n_negatives,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        prop = data["proposal"]
        if prop["kind"] == "uniform":
            proposal: Proposal = UniformProposal(prop["lo"], prop["hi"], prop.get("slide", 0.0))
        elif prop["kind"] == "normal":
            proposal = NormalProposal(prop["mean"], prop["sd"])
        else:
            raise ValueError(f"unknown proposal kind {prop['kind']!r}")
        return cls(
            mixture=MixtureParams(data["alpha"], data["beta"], data["tau_pos"]),
            proposal=proposal,
            t=data["t"],
            n_anchors=data["m"],
            n_negatives=data["n"],
            seed=data["seed"],
        )


def default_config(seed: int = 0) -> SimConfig:
    """Baseline setting: slid uniform proposal, small temperature."""
    return SimConfig(
        mixture=MixtureParams(alpha=0.9, beta=0.5, tau_pos=0.1),
        proposal=UniformProposal(-0.5, 0.5, slide=0.1),
        t=0.5,
        n_anchors=1000,
        n_negatives=64,
        seed=seed,
    )


def snapshot_config(seed: int = 0) -> SimConfig:
    """Distribution-snapshot setting: one anchor, Gaussian proposal, t=2."""
    return SimConfig(
        mixture=MixtureParams(alpha=0.9, beta=0.5, tau_pos=0.1),
        proposal=NormalProposal(0.0, 1.0),
        t=2.0,
        n_anchors=1,
        n_negatives=20000,
        seed=seed,
    )


def acceptance_probability(label: Label, cdf_value, alpha: float):
    """Accept-reject acceptance probability at a proposal-CDF value.

    The class conditionals are bounded by 2*alpha times the proposal
    density, giving acceptance (alpha + (1-2*alpha)*c) / alpha for true
    negatives and (1-alpha + (2*alpha-1)*c) / alpha for false negatives,
    where c is the proposal CDF at the drawn point.
    """
    if not (0.5 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0.5, 1] (got {alpha})")
    c = np.asarray(cdf_value, dtype=np.float64)
    if label is Label.TN:
        p = (alpha + (1.0 - 2.0 * alpha) * c) / alpha
    elif label is Label.FN:
        p = (1.0 - alpha + (2.0 * alpha - 1.0) * c) / alpha
    else:
        raise ValueError(f"label must be a Label (got {label!r})")
    return float(p) if p.ndim == 0 else p


def sample_conditional(
    label: Label,
    proposal: Proposal,
    alpha: float,
    rng: np.random.Generator,
    size: int | None = None,
):
    """Draw from the class-conditional score density by rejection.

    With ``size=None`` returns one float; otherwise an array of ``size``
    draws.  Each proposal draw is paired with a fresh uniform and kept if
    the uniform falls below the acceptance probability.
    """
    n = 1 if size is None else int(size)
    if n < 0:
        raise ValueError(f"size must be >= 0 (got {size})")
    out = np.empty(n, dtype=np.float64)
    filled = 0
    rounds = 0
    while filled < n:
        need = n - filled
        draws = np.atleast_1d(proposal.sample(rng, need))
        u = rng.random(need)
        accept = u <= acceptance_probability(label, proposal.cdf(draws), alpha)
        kept = draws[accept]
        out[filled : filled + kept.size] = kept
        filled += kept.size
        rounds += 1
        if rounds > _MAX_REJECTION_ROUNDS:
            raise SamplingError(
                f"rejection sampling exceeded {_MAX_REJECTION_ROUNDS} rounds "
                f"(label={label.value}, alpha={alpha})"
            )
    return float(out[0]) if size is None else out


@dataclass(frozen=True)
class AnchorScores:
    """One anchor's simulated draws, raw and temperature-mapped.

    ``pos_raw``/``pos_mapped`` hold optional positive-sample draws from
    the same anchor (the false-negative conditional is the law of
    positive scores by construction).
    """

    raw: np.ndarray
    mapped: np.ndarray
    is_tn: np.ndarray
    pos_raw: np.ndarray
    pos_mapped: np.ndarray
    proposal: Proposal

    def __post_init__(self) -> None:
        for name in ("raw", "mapped", "is_tn", "pos_raw", "pos_mapped"):
            arr = getattr(self, name)
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return int(self.raw.size)

    def labeled(self) -> list[LabeledScore]:
        """Mapped scores with their ground-truth labels."""
        return [
            LabeledScore(float(v), Label.TN if tn else Label.FN)
            for v, tn in zip(self.mapped, self.is_tn)
        ]


def _anchor_rng(seed_seq: np.random.SeedSequence) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_seq))


def generate_batch(
    config: SimConfig,
    seed_seq: np.random.SeedSequence | None = None,
    *,
    n_positives: int = 0,
) -> list[AnchorScores]:
    """Simulate all anchors of a batch.

    Every anchor owns an independent child RNG stream spawned from the
    batch seed, so results are reproducible bit-for-bit and anchors may
    be generated in parallel without changing the output.  Per anchor:
    slide the proposal, label each of the N samples (false negative with
    probability tau_pos), draw the raw scores from the matching
    conditional, map through exp(raw / t), and optionally draw
    ``n_positives`` positive scores from the false-negative conditional.
    """
    if seed_seq is None:
        seed_seq = np.random.SeedSequence(config.seed)
    params = config.mixture
    anchors: list[AnchorScores] = []
    for child in seed_seq.spawn(config.n_anchors):
        rng = _anchor_rng(child)
        prop = config.proposal.for_anchor(rng, config.t)
        u = rng.random(config.n_negatives)
        is_fn = u <= params.tau_pos
        n_fn = int(np.count_nonzero(is_fn))
        raw = np.empty(config.n_negatives, dtype=np.float64)
        raw[is_fn] = sample_conditional(Label.FN, prop, params.alpha, rng, size=n_fn)
        raw[~is_fn] = sample_conditional(
            Label.TN, prop, params.alpha, rng, size=config.n_negatives - n_fn
        )
        pos_raw = sample_conditional(Label.FN, prop, params.alpha, rng, size=n_positives)
        anchors.append(
            AnchorScores(
                raw=raw,
                mapped=np.exp(raw / config.t),
                is_tn=~is_fn,
                pos_raw=pos_raw,
                pos_mapped=np.exp(pos_raw / config.t),
                proposal=prop,
            )
        )
    return anchors


def sample_score_pairs(
    proposal: Proposal,
    alpha: float,
    n: int,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw coupled (positive, negative) raw-score pairs.

    Each pair takes two independent proposal draws; with probability
    ``alpha`` the negative is the smaller of the two (the encoder ranked
    it below the positive), otherwise the larger.  Marginally the
    negatives follow the true-negative conditional and the positives the
    false-negative conditional, while within a pair
    P(negative < positive) = alpha exactly.
    """
    if not (0.5 <= alpha <= 1.0):
        raise ValueError(f"alpha must be in [0.5, 1] (got {alpha})")
    first = proposal.sample(rng, n)
    second = proposal.sample(rng, n)
    lo = np.minimum(first, second)
    hi = np.maximum(first, second)
    ranked = rng.random(n) <= alpha
    neg = np.where(ranked, lo, hi)
    pos = np.where(ranked, hi, lo)
    return pos, neg


def _order_stat_mix(kind, u, alpha: float, tau_pos: float):
    """Mixture coefficients applied to the min/max order-statistic terms."""
    kind = kind.value if isinstance(kind, Label) else str(kind).upper()
    if kind == "TN":
        return alpha * (1.0 - u) + (1.0 - alpha) * u
    if kind == "FN":
        return alpha * u + (1.0 - alpha) * (1.0 - u)
    if kind == "UN":
        tn = alpha * (1.0 - u) + (1.0 - alpha) * u
        fn = alpha * u + (1.0 - alpha) * (1.0 - u)
        return (1.0 - tau_pos) * tn + tau_pos * fn
    raise ValueError(f"kind must be TN, FN or UN (got {kind!r})")


def mixture_density(kind, x, alpha: float, tau_pos: float, proposal: Proposal):
    """Class-conditional (or unlabeled) score density at raw score x.

    The min/max order statistics of two proposal draws have densities
    2*pdf*(1-cdf) and 2*pdf*cdf; the requested population is their
    alpha-mixture ("TN" or "FN") or the prior-weighted blend ("UN").
    """
    u = proposal.cdf(x)
    mix = _order_stat_mix(kind, u, alpha, tau_pos)
    out = 2.0 * proposal.pdf(x) * mix
    return float(out) if np.ndim(out) == 0 else out


def mixture_cdf(kind, x, alpha: float, tau_pos: float, proposal: Proposal):
    """Closed-form CDF companion of :func:`mixture_density`."""
    kind = kind.value if isinstance(kind, Label) else str(kind).upper()
    u = np.asarray(proposal.cdf(x), dtype=np.float64)
    tn = 2.0 * alpha * u + (1.0 - 2.0 * alpha) * u * u
    fn = 2.0 * (1.0 - alpha) * u + (2.0 * alpha - 1.0) * u * u
    if kind == "TN":
        out = tn
    elif kind == "FN":
        out = fn
    elif kind == "UN":
        out = (1.0 - tau_pos) * tn + tau_pos * fn
    else:
        raise ValueError(f"kind must be TN, FN or UN (got {kind!r})")
    return float(out) if out.ndim == 0 else out


def mapped_mixture_cdf(kind, y, alpha: float, tau_pos: float, proposal: Proposal, t: float):
    """CDF of the temperature-mapped score exp(raw / t) at value y."""
    arr = np.atleast_1d(np.asarray(y, dtype=np.float64))
    out = np.zeros_like(arr)
    positive = arr > 0.0
    out[positive] = mixture_cdf(kind, t * np.log(arr[positive]), alpha, tau_pos, proposal)
    return float(out[0]) if np.ndim(y) == 0 else out


def estimate_alpha_auc(pos_scores, neg_scores) -> float:
    """Fraction of (positive, negative) pairs scored concordantly.

    Counts pairs with pos >= neg over all cross pairs; ties count as
    concordant.  This is the empirical AUC of the scores.
    """
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.size == 0 or neg.size == 0:
        raise ValueError("both score lists must be non-empty")
    neg_sorted = np.sort(neg)
    wins = np.searchsorted(neg_sorted, pos, side="right").sum()
    return float(wins) / (pos.size * neg.size)


def paired_concordance(pos_scores, neg_scores) -> float:
    """Fraction of aligned pairs with pos >= neg (index i vs index i)."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    if pos.shape != neg.shape or pos.size == 0:
        raise ValueError("paired scores must be non-empty and aligned")
    return float(np.count_nonzero(pos >= neg)) / pos.size


def estimate_alpha_from_batch(anchors: list[AnchorScores]) -> tuple[float, float]:
    """Recover the mixture coefficient from a labeled batch.

    For independent draws of the two class conditionals the cross-pair
    AUC is not alpha itself: integrating the order-statistic mixtures
    gives P(TN < FN) = (2*alpha + 0.5) / 3 (it is 5/6 for a min against
    an independent max, 1/2 within a population).  This inverts that
    relation: alpha_hat = 1.5 * auc - 0.25.

    Returns (alpha_hat, standard_error) where the standard error is the
    anchor-level sample error of the mean, propagated through the
    inversion.  Anchors missing one of the two labels are skipped.
    """
    per_anchor = []
    for anchor in anchors:
        fn = anchor.mapped[~anchor.is_tn]
        tn = anchor.mapped[anchor.is_tn]
        if fn.size == 0 or tn.size == 0:
            continue
        per_anchor.append(estimate_alpha_auc(fn, tn))
    if not per_anchor:
        raise ValueError("no anchor carries both labels; cannot estimate alpha")
    aucs = np.asarray(per_anchor)
    alpha_hat = 1.5 * float(aucs.mean()) - 0.25
    se = 1.5 * float(aucs.std(ddof=1)) / math.sqrt(aucs.size) if aucs.size > 1 else math.inf
    return alpha_hat, se


def export_batch_csv(anchors: list[AnchorScores], config: SimConfig, path) -> None:
    """Write a batch as CSV plus a JSON sidecar echoing the config.

    Columns: anchor_id, sample_id, raw_score, mapped_score, label.  The
    sidecar replaces the output suffix with .json.  Floats are written
    with repr, which round-trips exactly.
    """
    path = str(path)
    with open(path, "w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(["anchor_id", "sample_id", "raw_score", "mapped_score", "label"])
        for anchor_id, anchor in enumerate(anchors):
            for sample_id in range(anchor.n):
                writer.writerow(
                    [
                        anchor_id,
                        sample_id,
                        repr(float(anchor.raw[sample_id])),
                        repr(float(anchor.mapped[sample_id])),
                        "TN" if anchor.is_tn[sample_id] else "FN",
                    ]
                )
    sidecar = os.path.splitext(path)[0] + ".json"
    with open(sidecar, "w") as handle:
        json.dump(config.to_dict(), handle, indent=2)
        handle.write("\n")
