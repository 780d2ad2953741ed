"""Experiment drivers: estimator sweeps, theory checks, report export.

Sweeps vary one simulation parameter at a time and score the four
estimators of the true-negative mean against the supervised oracle,
anchor by anchor.  The theory suite verifies three properties of the
weighting scheme at beta = 0.5: the weight--posterior identity, the
O(1/sqrt(N)) shrinkage of the weighted-mean error, and the finite-N
loss-gap bound tau_neg * sqrt(2*pi/N).  Everything is reproducible
bit-for-bit from (grid, seed) and independent of the thread count:
each (grid point, repetition) task owns its own child RNG stream and
aggregation order is fixed.
"""

from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from scipy import integrate

from bcl import __version__
from bcl.estimators import (
    Label,
    ScoreBatch,
    contrastive_loss,
    theta_bcl,
    theta_biased,
    theta_dcl,
    theta_sup,
)
from bcl.simulate import (
    AnchorScores,
    SimConfig,
    UniformProposal,
    generate_batch,
    mixture_density,
)
from bcl.weights import MixtureParams, cdf_transform, importance_weight, posterior_tn, weight_batch

__all__ = [
    "BiasGapCurve",
    "BiasGapPoint",
    "EstimatorReport",
    "LemmaReport",
    "SweepGrid",
    "SweepRow",
    "bias_gap_curve",
    "export_long_csv",
    "export_report",
    "report_from_json",
    "run_lemma_suite",
    "run_mean_values",
    "run_mse_sweep",
]

ESTIMATORS = ("biased", "dcl", "bcl", "sup")
SWEEP_AXES = ("alpha", "n", "tau_pos", "gamma", "t", "m")

# Extra positive draws per anchor: one positive score for loss-level
# comparisons plus ten for the prior-corrected estimator.
DCL_POSITIVES = 10


@dataclass(frozen=True)
class SweepGrid:
    """One sweep axis, its values, and the fixed base configuration."""

    axis: str
    values: tuple[float, ...]
    base: SimConfig
    repetitions: int
    seed: int

    def __post_init__(self) -> None:
        if self.axis not in SWEEP_AXES:
            raise ValueError(f"axis must be one of {SWEEP_AXES} (got {self.axis!r})")
        if not self.values:
            raise ValueError("sweep needs at least one axis value")
        if self.repetitions < 1:
            raise ValueError(f"repetitions must be >= 1 (got {self.repetitions})")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        for v in self.values:
            self.config_for(v)  # validates the value against its legal range

    def config_for(self, value: float) -> SimConfig:
        """Base config with the axis value substituted in."""
        base = self.base
        if self.axis == "alpha":
            return replace(base, mixture=replace(base.mixture, alpha=value))
        if self.axis == "tau_pos":
            return replace(base, mixture=replace(base.mixture, tau_pos=value))
        if self.axis == "n":
            return replace(base, n_negatives=int(value))
        if self.axis == "m":
            return replace(base, n_anchors=int(value))
        if self.axis == "gamma":
            if not isinstance(base.proposal, UniformProposal):
                raise ValueError("gamma sweeps need a uniform proposal")
            return replace(base, proposal=replace(base.proposal, slide=value))
        # t sweep: shrink a uniform interval if the new legal range requires it
        proposal = base.proposal
        if isinstance(proposal, UniformProposal):
            bound = 1.0 / (value * value)
            widest = max(abs(proposal.lo), abs(proposal.hi))
            if widest > bound:
                scale = bound / widest
                proposal = replace(proposal, lo=proposal.lo * scale, hi=proposal.hi * scale)
        return replace(base, t=value, proposal=proposal)


@dataclass(frozen=True)
class SweepRow:
    axis_value: float
    n_anchors: int
    dropped: int
    mse: dict[str, float]
    mean: dict[str, float]
    std: dict[str, float]


@dataclass(frozen=True)
class EstimatorReport:
    kind: str
    axis: str
    repetitions: int
    seed: int
    base_config: dict
    rows: tuple[SweepRow, ...]

    def to_dict(self) -> dict:
        return {
            "artifact_version": __version__,
            "kind": self.kind,
            "axis": self.axis,
            "repetitions": self.repetitions,
            "seed": self.seed,
            "base_config": self.base_config,
            "rows": [
                {
                    "axis_value": row.axis_value,
                    "n_anchors": row.n_anchors,
                    "dropped": row.dropped,
                    "mse": {k: row.mse[k] for k in ESTIMATORS},
                    "mean": {k: row.mean[k] for k in ESTIMATORS},
                    "std": {k: row.std[k] for k in ESTIMATORS},
                }
                for row in self.rows
            ],
        }


def _weight_params(mixture: MixtureParams) -> MixtureParams:
    """Estimator benches fix the mining level at 0.5 so the weighted mean
    targets the plain true-negative population."""
    return replace(mixture, beta=0.5)


def _anchor_estimates(anchor: AnchorScores, config: SimConfig):
    """Four estimates for one anchor, or None when the supervised mean is
    undefined (no true negative present)."""
    if not np.any(anchor.is_tn):
        return None
    params = _weight_params(config.mixture)
    batch = ScoreBatch(
        pos_score=float(anchor.pos_mapped[0]),
        neg_scores=anchor.mapped,
        extra_pos_scores=anchor.pos_mapped[1:],
    )
    weights = weight_batch(batch.neg_scores, params)
    return {
        "biased": theta_biased(batch.neg_scores),
        "dcl": theta_dcl(batch.neg_scores, batch.extra_pos_scores, config.mixture.tau_pos),
        "bcl": theta_bcl(batch.neg_scores, weights),
        "sup": theta_sup(anchor.labeled()),
    }


def _run_task(grid: SweepGrid, point: int, rep: int):
    """Per-(point, repetition) statistics with an independent RNG stream."""
    config = grid.config_for(grid.values[point])
    seq = np.random.SeedSequence(entropy=grid.seed, spawn_key=(point, rep))
    batch = generate_batch(config, seq, n_positives=1 + DCL_POSITIVES)
    values = {name: [] for name in ESTIMATORS}
    dropped = 0
    for anchor in batch:
        est = _anchor_estimates(anchor, config)
        if est is None:
            dropped += 1
            continue
        for name in ESTIMATORS:
            values[name].append(est[name])
    arrays = {name: np.asarray(vals) for name, vals in values.items()}
    sup = arrays["sup"]
    mse = {name: float(np.mean((arrays[name] - sup) ** 2)) if sup.size else math.nan
           for name in ESTIMATORS}
    return {
        "kept": int(sup.size),
        "dropped": dropped,
        "mse": mse,
        "values": arrays,
    }


def _execute(grid: SweepGrid, threads: int):
    tasks = [(i, r) for i in range(len(grid.values)) for r in range(grid.repetitions)]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda t: _run_task(grid, *t), tasks))
    else:
        results = [_run_task(grid, i, r) for i, r in tasks]
    return {task: res for task, res in zip(tasks, results)}


def _aggregate(grid: SweepGrid, results: dict, kind: str) -> EstimatorReport:
    rows = []
    for i, value in enumerate(grid.values):
        reps = [results[(i, r)] for r in range(grid.repetitions)]
        pooled = {
            name: np.concatenate([r["values"][name] for r in reps]) for name in ESTIMATORS
        }
        mse = {
            name: float(np.mean([r["mse"][name] for r in reps])) for name in ESTIMATORS
        }
        mean = {
            name: float(np.mean(pooled[name])) if pooled[name].size else math.nan
            for name in ESTIMATORS
        }
        std = {
            name: float(np.std(pooled[name], ddof=1)) if pooled[name].size > 1 else math.nan
            for name in ESTIMATORS
        }
        rows.append(
            SweepRow(
                axis_value=value,
                n_anchors=int(sum(r["kept"] for r in reps)),
                dropped=int(sum(r["dropped"] for r in reps)),
                mse=mse,
                mean=mean,
                std=std,
            )
        )
    return EstimatorReport(
        kind=kind,
        axis=grid.axis,
        repetitions=grid.repetitions,
        seed=grid.seed,
        base_config=grid.base.to_dict(),
        rows=tuple(rows),
    )


def run_mse_sweep(grid: SweepGrid, *, threads: int = 1) -> EstimatorReport:
    """Mean squared error of every estimator against the supervised mean,
    per grid point.  Anchors without a true negative are dropped and
    counted; per-repetition MSEs are averaged with equal weight."""
    return _aggregate(grid, _execute(grid, threads), "mse_sweep")


def run_mean_values(grid: SweepGrid, *, threads: int = 1) -> EstimatorReport:
    """Anchor-averaged estimator values per grid point (same pass as the
    MSE sweep, reported with means and dispersions up front)."""
    return _aggregate(grid, _execute(grid, threads), "mean_values")


# ---------------------------------------------------------------------------
# Theory checks (all assume beta = 0.5)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IdentityCheck:
    max_abs_error: float
    n_points: int
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_abs_error <= self.tolerance


@dataclass(frozen=True)
class RateCheck:
    n_values: tuple[int, ...]
    mean_abs_errors: tuple[float, ...]
    slope: float
    slope_range: tuple[float, float]

    @property
    def passed(self) -> bool:
        lo, hi = self.slope_range
        return lo <= self.slope <= hi


@dataclass(frozen=True)
class BoundCheck:
    n_negatives: int
    bound: float
    measured: float

    @property
    def passed(self) -> bool:
        return self.measured <= self.bound


@dataclass(frozen=True)
class LemmaReport:
    identity: IdentityCheck
    rate: RateCheck
    bounds: tuple[BoundCheck, ...]

    @property
    def passed(self) -> bool:
        return self.identity.passed and self.rate.passed and all(b.passed for b in self.bounds)

    def to_dict(self) -> dict:
        return {
            "artifact_version": __version__,
            "identity": {
                "max_abs_error": self.identity.max_abs_error,
                "n_points": self.identity.n_points,
                "tolerance": self.identity.tolerance,
                "passed": self.identity.passed,
            },
            "rate": {
                "n_values": list(self.rate.n_values),
                "mean_abs_errors": list(self.rate.mean_abs_errors),
                "slope": self.rate.slope,
                "slope_range": list(self.rate.slope_range),
                "passed": self.rate.passed,
            },
            "bounds": [
                {
                    "n": b.n_negatives,
                    "bound": b.bound,
                    "measured": b.measured,
                    "passed": b.passed,
                }
                for b in self.bounds
            ],
            "passed": self.passed,
        }


def check_weight_posterior_identity(
    *, grid_size: int = 22, tolerance: float = 1e-12
) -> IdentityCheck:
    """At beta = 0.5 the weight times the negative prior equals the
    posterior probability of being a true negative; verify the algebra on
    a dense (alpha, tau_pos, phi) grid."""
    alphas = np.linspace(0.5, 1.0, grid_size)
    taus = np.linspace(0.02, 0.98, grid_size - 1)
    phis = np.linspace(0.0, 1.0, grid_size)
    worst = 0.0
    count = 0
    for alpha in alphas:
        for tau in taus:
            params = MixtureParams(float(alpha), 0.5, float(tau))
            omega = importance_weight(phis, params)
            posterior = posterior_tn(phis, params)
            worst = max(worst, float(np.max(np.abs(omega * params.tau_neg - posterior))))
            count += phis.size
    return IdentityCheck(max_abs_error=worst, n_points=count, tolerance=tolerance)


def population_tn_mean(config: SimConfig) -> float:
    """Mean temperature-mapped score of the true-negative population,
    by adaptive quadrature over the proposal support."""
    lo, hi = config.proposal.support()
    value, _ = integrate.quad(
        lambda x: math.exp(x / config.t)
        * mixture_density(Label.TN, x, config.mixture.alpha, config.mixture.tau_pos, config.proposal),
        lo,
        hi,
    )
    return value


def check_convergence_rate(
    config: SimConfig,
    *,
    n_values: tuple[int, ...] = (64, 256, 1024, 4096),
    n_anchors: int = 300,
    slope_range: tuple[float, float] = (-0.65, -0.35),
) -> RateCheck:
    """Fit the log-log slope of mean |weighted mean - population mean|
    against the number of negatives; theory says -1/2.

    Runs slide-free so every anchor shares one population mean.
    """
    base = replace(config, n_anchors=n_anchors)
    if isinstance(base.proposal, UniformProposal):
        base = replace(base, proposal=replace(base.proposal, slide=0.0))
    params = _weight_params(base.mixture)
    errors = []
    for n in n_values:
        cfg = replace(base, n_negatives=int(n))
        theta_pop = population_tn_mean(cfg)
        seq = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(101, int(n)))
        batch = generate_batch(cfg, seq)
        errs = [
            abs(theta_bcl(anchor.mapped, weight_batch(anchor.mapped, params)) - theta_pop)
            for anchor in batch
        ]
        errors.append(float(np.mean(errs)))
    slope = float(np.polyfit(np.log(np.asarray(n_values, dtype=float)), np.log(errors), 1)[0])
    return RateCheck(
        n_values=tuple(int(n) for n in n_values),
        mean_abs_errors=tuple(errors),
        slope=slope,
        slope_range=slope_range,
    )


def check_loss_gap_bound(
    config: SimConfig, *, n_values: tuple[int, ...] = (64, 256)
) -> tuple[BoundCheck, ...]:
    """Measure mean |weighted loss - supervised loss| per anchor and
    compare with tau_neg * sqrt(2*pi/N).  The supervised loss uses the
    anchor's true-negative mean scaled back to N samples; both losses
    share the anchor's positive score."""
    params = _weight_params(config.mixture)
    checks = []
    for n in n_values:
        cfg = replace(config, n_negatives=int(n))
        seq = np.random.SeedSequence(entropy=cfg.seed, spawn_key=(202, int(n)))
        batch = generate_batch(cfg, seq, n_positives=1)
        gaps = []
        for anchor in batch:
            if not np.any(anchor.is_tn):
                continue
            pos = float(anchor.pos_mapped[0])
            weights = weight_batch(anchor.mapped, params)
            loss_weighted = contrastive_loss(ScoreBatch(pos, anchor.mapped), weights)
            sup_mean = theta_sup(anchor.labeled())
            loss_sup = math.log1p(cfg.n_negatives * sup_mean / pos)
            gaps.append(abs(loss_weighted - loss_sup))
        bound = params.tau_neg * math.sqrt(2.0 * math.pi / n)
        checks.append(BoundCheck(n_negatives=int(n), bound=bound, measured=float(np.mean(gaps))))
    return tuple(checks)


def run_lemma_suite(
    config: SimConfig,
    *,
    rate_n_values: tuple[int, ...] = (64, 256, 1024, 4096),
    rate_anchors: int = 300,
    bound_n_values: tuple[int, ...] = (64, 256),
) -> LemmaReport:
    """All three theory checks in one report.  Requires beta = 0.5, which
    every check assumes."""
    if config.mixture.beta != 0.5:
        raise ValueError(
            f"the theory checks assume beta = 0.5 (got {config.mixture.beta})"
        )
    return LemmaReport(
        identity=check_weight_posterior_identity(),
        rate=check_convergence_rate(config, n_values=rate_n_values, n_anchors=rate_anchors),
        bounds=check_loss_gap_bound(config, n_values=bound_n_values),
    )


# ---------------------------------------------------------------------------
# Loss-vs-objective gap curve
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BiasGapPoint:
    xhat: float
    value: float | None
    at_pole: bool


@dataclass(frozen=True)
class BiasGapCurve:
    """The fractional map x * tau_neg / (m - x * tau_pos) relating the
    optimized positive score to the density ratio it is meant to track.
    The map has a jump discontinuity at x = m / tau_pos; grid points
    landing exactly on the pole are flagged instead of evaluated."""

    m: float
    tau_pos: float
    pole: float
    points: tuple[BiasGapPoint, ...]


def bias_gap_curve(m: float, tau_pos: float, xhat_grid) -> BiasGapCurve:
    if not (math.isfinite(m) and m > 0.0):
        raise ValueError(f"m must be > 0 (got {m})")
    if not (0.0 < tau_pos < 1.0):
        raise ValueError(f"tau-pos must be in (0, 1) (got {tau_pos})")
    tau_neg = 1.0 - tau_pos
    pole = m / tau_pos
    points = []
    for x in np.asarray(xhat_grid, dtype=np.float64):
        denom = m - x * tau_pos
        if denom == 0.0:
            points.append(BiasGapPoint(float(x), None, True))
        else:
            points.append(BiasGapPoint(float(x), float(x * tau_neg / denom), False))
    return BiasGapCurve(m=m, tau_pos=tau_pos, pole=pole, points=tuple(points))


# ---------------------------------------------------------------------------
# Report writers
# ---------------------------------------------------------------------------

_CSV_COLUMNS = (
    ["axis", "axis_value", "n_anchors", "dropped"]
    + [f"mse_{name}" for name in ESTIMATORS]
    + [f"mean_{name}" for name in ESTIMATORS]
    + [f"std_{name}" for name in ESTIMATORS]
)


def _fmt(value: float) -> str:
    return format(float(value), ".17g")


def export_report(report: EstimatorReport, fmt: str, path) -> None:
    """Write a sweep report as CSV or JSON.

    Column order is fixed and CSV floats carry 17 significant digits, so
    identical reports export to identical bytes.  JSON embeds the base
    configuration and the artifact version and can be re-ingested with
    :func:`report_from_json`.
    """
    path = str(path)
    if fmt == "csv":
        try:
            with open(path, "w", newline="") as handle:
                handle.write(",".join(_CSV_COLUMNS) + "\n")
                for row in report.rows:
                    fields = [report.axis, _fmt(row.axis_value), str(row.n_anchors), str(row.dropped)]
                    fields += [_fmt(row.mse[name]) for name in ESTIMATORS]
                    fields += [_fmt(row.mean[name]) for name in ESTIMATORS]
                    fields += [_fmt(row.std[name]) for name in ESTIMATORS]
                    handle.write(",".join(fields) + "\n")
        except OSError as exc:
            raise OSError(f"cannot write report to {path!r}: {exc}") from exc
    elif fmt == "json":
        try:
            with open(path, "w") as handle:
                json.dump(report.to_dict(), handle, indent=2)
                handle.write("\n")
        except OSError as exc:
            raise OSError(f"cannot write report to {path!r}: {exc}") from exc
    else:
        raise ValueError(f"format must be 'csv' or 'json' (got {fmt!r})")


def export_long_csv(report: EstimatorReport, path) -> None:
    """Plot-ready long format: one (x, series, value) row per statistic."""
    with open(str(path), "w", newline="") as handle:
        handle.write("x,series,value\n")
        for row in report.rows:
            for stat, table in (("mse", row.mse), ("mean", row.mean), ("std", row.std)):
                for name in ESTIMATORS:
                    handle.write(f"{_fmt(row.axis_value)},{stat}_{name},{_fmt(table[name])}\n")


def report_from_json(path) -> EstimatorReport:
    """Rebuild an :class:`EstimatorReport` from its JSON export."""
    with open(str(path)) as handle:
        data = json.load(handle)
    rows = tuple(
        SweepRow(
            axis_value=row["axis_value"],
            n_anchors=row["n_anchors"],
            dropped=row["dropped"],
            mse=row["mse"],
            mean=row["mean"],
            std=row["std"],
        )
        for row in data["rows"]
    )
    return EstimatorReport(
        kind=data["kind"],
        axis=data["axis"],
        repetitions=data["repetitions"],
        seed=data["seed"],
        base_config=data["base_config"],
        rows=rows,
    )
