"""Acceptance suite: every headline criterion at its stated tolerance.

Each test prints one PASS/FAIL line (visible with ``pytest -s``); the
assertions carry the same tolerances, so a plain pytest run is the gate.
"""

import json
import math
import subprocess
import sys

import numpy as np
from scipy import integrate, stats

from bcl.estimators import Label, ScoreBatch, contrastive_loss, theta_bcl, theta_biased
from bcl.harness import (
    SweepGrid,
    check_loss_gap_bound,
    check_convergence_rate,
    check_weight_posterior_identity,
    run_mse_sweep,
)
from bcl.simulate import (
    NormalProposal,
    UniformProposal,
    default_config,
    estimate_alpha_from_batch,
    generate_batch,
    mixture_density,
    paired_concordance,
    sample_conditional,
    sample_score_pairs,
)
from bcl.trainer import EncoderParams, loss_and_grad
from bcl.weights import Ecdf, MixtureParams, cdf_transform, unlabeled_cdf_coefficients, weight_batch


def _verdict(name: str, passed: bool, detail: str) -> None:
    print(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")
    assert passed, f"{name}: {detail}"


def test_ecdf_worked_example():
    value = Ecdf([6, 4, 3, 7, 5]).evaluate(6)
    _verdict("ecdf-worked-example", value == 0.8, f"fraction at 6 = {value} (want exactly 0.8)")


def test_weight_posterior_identity_grid():
    check = check_weight_posterior_identity()
    _verdict(
        "weight-posterior-identity",
        check.passed and check.n_points >= 10_000,
        f"max |w*tau_neg - posterior| = {check.max_abs_error:.3e} over "
        f"{check.n_points} grid points (tolerance 1e-12)",
    )


def test_conditional_densities_normalize():
    worst = 0.0
    for proposal in (NormalProposal(), UniformProposal(-0.5, 0.5)):
        lo, hi = proposal.support()
        for alpha in (0.6, 0.9):
            for kind in ("TN", "FN"):
                value, _ = integrate.quad(
                    lambda x: mixture_density(kind, x, alpha, 0.1, proposal), lo, hi
                )
                worst = max(worst, abs(value - 1.0))
    _verdict(
        "conditional-density-normalization",
        worst <= 1e-6,
        f"max |integral - 1| = {worst:.2e} over both proposals, alpha in {{0.6, 0.9}} "
        "(tolerance 1e-6)",
    )


def test_cdf_transform_consistency():
    worst = 0.0
    endpoints_exact = True
    alphas = [0.5, 0.5 + 1e-13, 0.6, 0.75, 0.9, 1.0]
    taus = [0.05, 0.1, 0.3, 0.5, 0.7, 0.95]
    qs = np.linspace(0.0, 1.0, 101)
    for alpha in alphas:
        for tau in taus:
            params = MixtureParams(alpha, 0.5, tau)
            a, b = unlabeled_cdf_coefficients(params)
            phi = cdf_transform(qs, params)
            worst = max(worst, float(np.max(np.abs(a * phi * phi + b * phi - qs))))
            endpoints_exact &= cdf_transform(0.0, params) == 0.0
            endpoints_exact &= cdf_transform(1.0, params) == 1.0
    _verdict(
        "cdf-transform-consistency",
        worst <= 1e-10 and endpoints_exact,
        f"max round-trip residual = {worst:.2e} (tolerance 1e-10), "
        f"endpoints exact = {endpoints_exact}",
    )


def test_rejection_sampler_fidelity():
    # goodness of fit in proposal-CDF space against the closed-form CDF
    worst_p = 1.0
    rng = np.random.default_rng(2026)
    for proposal in (NormalProposal(), UniformProposal(-0.5, 0.5)):
        for label in (Label.TN, Label.FN):
            draws = sample_conditional(label, proposal, 0.9, rng, size=100_000)
            u = np.asarray(proposal.cdf(draws))
            edges = np.linspace(0.0, 1.0, 41)
            if label is Label.TN:
                cdf = 2 * 0.9 * edges + (1 - 2 * 0.9) * edges**2
            else:
                cdf = 2 * 0.1 * edges + (2 * 0.9 - 1) * edges**2
            observed, _ = np.histogram(u, bins=edges)
            pvalue = stats.chisquare(observed, np.diff(cdf) * draws.size).pvalue
            worst_p = min(worst_p, pvalue)

    # alpha recovery from generated data, two routes:
    # (a) paired concordance of the coupled-pair construction,
    # (b) de-mixed cross AUC of an independent labeled batch
    # (independent TN-vs-FN cross pairs concentrate at (2*alpha + 0.5)/3,
    # not alpha, so the batch estimate inverts that relation)
    alpha = 0.9
    n_pairs = 200_000
    pos, neg = sample_score_pairs(UniformProposal(-0.5, 0.5), alpha, n_pairs, rng)
    concordance = paired_concordance(pos, neg)
    concordance_se = math.sqrt(alpha * (1 - alpha) / n_pairs)
    paired_ok = abs(concordance - alpha) < 3 * concordance_se

    batch = generate_batch(default_config(seed=606))
    alpha_hat, se = estimate_alpha_from_batch(batch)
    demixed_ok = abs(alpha_hat - alpha) < 3 * se

    _verdict(
        "rejection-sampler-fidelity",
        worst_p > 1e-3 and paired_ok and demixed_ok,
        f"min chi-square p = {worst_p:.4f} (level 1e-3); paired concordance "
        f"{concordance:.4f} vs alpha 0.9 (3*SE {3 * concordance_se:.4f}); batch estimate "
        f"{alpha_hat:.4f} +/- {se:.4f}",
    )


def test_mse_ordering_at_defaults():
    grid = SweepGrid("alpha", (0.9,), default_config(seed=404), repetitions=20, seed=404)
    row = run_mse_sweep(grid).rows[0]
    ordered = row.mse["bcl"] < row.mse["dcl"] and row.mse["bcl"] < row.mse["biased"]
    _verdict(
        "mse-ordering",
        ordered and row.mse["sup"] == 0.0,
        f"R=20 at defaults: bcl {row.mse['bcl']:.3e} < dcl {row.mse['dcl']:.3e} "
        f"and < biased {row.mse['biased']:.3e}; sup = {row.mse['sup']}",
    )


def test_convergence_rate_slope():
    check = check_convergence_rate(default_config(seed=505))
    _verdict(
        "weighted-mean-convergence-rate",
        check.passed,
        f"log-log slope {check.slope:.3f} over N in {check.n_values} "
        f"(window [-0.65, -0.35], theory -0.5)",
    )


def test_loss_gap_bound():
    checks = check_loss_gap_bound(default_config(seed=303), n_values=(64, 256))
    bound_64 = checks[0].bound
    ok = all(c.measured <= c.bound for c in checks)
    ok = ok and abs(bound_64 - 0.2819956808959875) < 1e-12
    detail = "; ".join(
        f"N={c.n_negatives}: gap {c.measured:.4f} <= bound {c.bound:.4f}" for c in checks
    )
    _verdict("loss-gap-bound", ok, detail + " (tau_neg = 0.9)")


def test_gradient_check():
    mixture = MixtureParams(0.8, 0.5, 0.2)
    worst = 0.0
    h = 1e-5
    for seed in range(20):
        rng = np.random.default_rng(seed)
        params = EncoderParams.init_random((5, 8, 4), 0.5, rng)
        anchor = rng.standard_normal(5)
        positive = rng.standard_normal(5)
        negatives = rng.standard_normal((6, 5))
        _, grads = loss_and_grad(params, anchor, positive, negatives, mixture)
        for layer in range(len(params.weights)):
            for arr, grad in (
                (params.weights[layer], grads.weights[layer]),
                (params.biases[layer], grads.biases[layer]),
            ):
                it = np.nditer(arr, flags=["multi_index"])
                for _ in it:
                    idx = it.multi_index
                    orig = arr[idx]
                    arr[idx] = orig + h
                    up, _ = loss_and_grad(params, anchor, positive, negatives, mixture)
                    arr[idx] = orig - h
                    down, _ = loss_and_grad(params, anchor, positive, negatives, mixture)
                    arr[idx] = orig
                    numeric = (up - down) / (2 * h)
                    rel = abs(numeric - grad[idx]) / max(1e-8, abs(numeric) + abs(grad[idx]))
                    worst = max(worst, rel)
    _verdict(
        "analytic-gradient-check",
        worst < 1e-4,
        f"max relative error vs central differences = {worst:.2e} over 20 draws "
        "(tolerance 1e-4)",
    )


def test_degenerate_collapse_is_bit_identical():
    params = MixtureParams(0.5, 0.5, 0.1)
    rng = np.random.default_rng(99)
    ok = True
    for _ in range(50):
        scores = np.exp(rng.uniform(-2.0, 2.0, size=32))
        weights = weight_batch(scores, params).weights
        ok &= bool(np.all(weights == 1.0))
        ok &= theta_bcl(scores, weights) == theta_biased(scores)
        batch = ScoreBatch(2.0, scores)
        ok &= contrastive_loss(batch, weights) == contrastive_loss(batch, np.ones(32))

    # trainer path: reweighted loss and gradient equal the plain path bitwise
    enc_rng = np.random.default_rng(7)
    enc = EncoderParams.init_random((4, 6, 3), 0.5, enc_rng)
    anchor, positive = enc_rng.standard_normal(4), enc_rng.standard_normal(4)
    negatives = enc_rng.standard_normal((8, 4))
    loss_w, grads_w = loss_and_grad(enc, anchor, positive, negatives, params)
    loss_u, grads_u = loss_and_grad(enc, anchor, positive, negatives, params, unit_weights=True)
    ok &= loss_w == loss_u
    for gw, gu in zip(grads_w.weights + grads_w.biases, grads_u.weights + grads_u.biases):
        ok &= bool(np.array_equal(gw, gu))
    _verdict(
        "degenerate-collapse",
        ok,
        "alpha = beta = 0.5: unit weights, identical estimators, identical loss and "
        "gradient, all bitwise",
    )


def test_cli_byte_reproducibility(tmp_path):
    def run(*args):
        result = subprocess.run(
            [sys.executable, "-m", "bcl", *args], capture_output=True, text=True
        )
        assert result.returncode == 0, result.stderr
        return result

    for name in ("a", "b"):
        run("simulate", "--m", "50", "--n", "32", "--seed", "9",
            "--out", str(tmp_path / f"{name}.csv"))
    sim_same = (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()

    for threads, name in (("1", "t1"), ("4", "t4")):
        run("sweep", "--axis", "alpha", "--values", "0.6,0.9", "--reps", "2",
            "--m", "40", "--n", "16", "--seed", "3", "--threads", threads,
            "--out", str(tmp_path / f"{name}.csv"))
    sweep_same = (tmp_path / "t1.csv").read_bytes() == (tmp_path / "t4.csv").read_bytes()

    _verdict(
        "cli-byte-reproducibility",
        sim_same and sweep_same,
        f"simulate reruns identical = {sim_same}; sweep bytes identical across "
        f"thread counts = {sweep_same}",
    )
