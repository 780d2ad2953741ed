"""Encoder, manual gradients, and desk-scale training runs."""

import math

import numpy as np
import pytest

from bcl.trainer import (
    EncoderParams,
    SyntheticDataset,
    TrainConfig,
    encode,
    load_params,
    loss_and_grad,
    save_params,
    train,
    write_metrics_csv,
)
from bcl.weights import MixtureParams, beta_from_classes

MIX = MixtureParams(0.8, 0.5, 0.2)


def _random_setup(seed, d_in=5, hidden=8, d_out=4, n_neg=6):
    rng = np.random.default_rng(seed)
    params = EncoderParams.init_random((d_in, hidden, d_out), 0.5, rng)
    anchor = rng.standard_normal(d_in)
    positive = rng.standard_normal(d_in)
    negatives = rng.standard_normal((n_neg, d_in))
    return params, anchor, positive, negatives


def _finite_difference_max_rel_err(params, anchor, positive, negatives, mixture, h=1e-5):
    """Central-difference oracle over every parameter entry.

    Importance weights depend on the scores only through their ranks,
    which are stable under the tiny step, so differentiating the full
    loss agrees with the weights-held-constant gradient.
    """
    _, grads = loss_and_grad(params, anchor, positive, negatives, mixture)
    worst = 0.0
    for layer in range(len(params.weights)):
        for arr, grad in (
            (params.weights[layer], grads.weights[layer]),
            (params.biases[layer], grads.biases[layer]),
        ):
            it = np.nditer(arr, flags=["multi_index"])
            for _ in it:
                idx = it.multi_index
                original = arr[idx]
                arr[idx] = original + h
                up, _ = loss_and_grad(params, anchor, positive, negatives, mixture)
                arr[idx] = original - h
                down, _ = loss_and_grad(params, anchor, positive, negatives, mixture)
                arr[idx] = original
                numeric = (up - down) / (2.0 * h)
                rel = abs(numeric - grad[idx]) / max(1e-8, abs(numeric) + abs(grad[idx]))
                worst = max(worst, rel)
    return worst


class TestEncode:
    def test_embedding_radius_is_one_over_t(self):
        rng = np.random.default_rng(0)
        params = EncoderParams.init_random((5, 8, 4), 0.5, rng)
        for seed in range(10):
            x = np.random.default_rng(seed).standard_normal(5)
            assert np.linalg.norm(encode(params, x)) == pytest.approx(1.0 / 0.5, abs=1e-9)

    def test_zero_network_gives_constant_embedding(self):
        params = EncoderParams(
            (np.zeros((8, 5)), np.zeros((4, 8))),
            (np.zeros(8), np.zeros(4)),
            0.5,
        )
        rng = np.random.default_rng(1)
        first = encode(params, rng.standard_normal(5))
        second = encode(params, rng.standard_normal(5))
        assert np.array_equal(first, second)

    def test_deterministic_for_duplicated_input(self):
        rng = np.random.default_rng(2)
        params = EncoderParams.init_random((3, 6, 4), 0.5, rng)
        x = rng.standard_normal(3)
        assert np.array_equal(encode(params, x), encode(params, x.copy()))

    def test_matrix_input(self):
        rng = np.random.default_rng(3)
        params = EncoderParams.init_random((3, 6, 4), 0.25, rng)
        batch = rng.standard_normal((7, 3))
        emb = encode(params, batch)
        assert emb.shape == (7, 4)
        assert np.allclose(np.linalg.norm(emb, axis=1), 4.0, atol=1e-9)

    def test_dimension_mismatch_rejected(self):
        rng = np.random.default_rng(4)
        params = EncoderParams.init_random((3, 6, 4), 0.5, rng)
        with pytest.raises(ValueError, match="dimension"):
            encode(params, np.zeros(5))


class TestLossAndGrad:
    def test_gradient_matches_central_differences(self):
        worst = 0.0
        for seed in range(20):
            setup = _random_setup(seed)
            worst = max(worst, _finite_difference_max_rel_err(*setup, MIX))
        assert worst < 1e-4

    def test_zero_weights_remove_negative_gradient(self):
        params, anchor, positive, negatives = _random_setup(11)
        rng = np.random.default_rng(99)
        other_negatives = rng.standard_normal(negatives.shape)
        zeros = np.zeros(negatives.shape[0])
        loss_a, grads_a = loss_and_grad(params, anchor, positive, negatives, MIX,
                                        weights_override=zeros)
        loss_b, grads_b = loss_and_grad(params, anchor, positive, other_negatives, MIX,
                                        weights_override=zeros)
        assert loss_a == 0.0 and loss_b == 0.0
        for ga, gb in zip(grads_a.weights + grads_a.biases, grads_b.weights + grads_b.biases):
            assert np.array_equal(ga, gb)

    def test_uninformative_mixture_collapses_to_plain_loss(self):
        params, anchor, positive, negatives = _random_setup(12)
        mixture = MixtureParams(0.5, 0.5, 0.3)
        loss_w, grads_w = loss_and_grad(params, anchor, positive, negatives, mixture)
        loss_u, grads_u = loss_and_grad(params, anchor, positive, negatives, mixture,
                                        unit_weights=True)
        assert loss_w == loss_u
        for gw, gu in zip(grads_w.weights + grads_w.biases, grads_u.weights + grads_u.biases):
            assert np.array_equal(gw, gu)

    def test_non_finite_input_named(self):
        params, anchor, positive, negatives = _random_setup(13)
        anchor[0] = math.nan
        with pytest.raises(RuntimeError, match="pos_score"):
            loss_and_grad(params, anchor, positive, negatives, MIX)


class TestTrain:
    def test_separable_blobs_reach_high_probe_accuracy(self):
        dataset = SyntheticDataset.gaussian_blobs(2, 80, 4, seed=1)
        config = TrainConfig(
            mixture=MixtureParams(0.9, 0.5, 0.5),
            epochs=200,
            learning_rate=0.5,
            anchors_per_step=16,
            n_negatives=16,
            noise_scale=0.3,
            seed=7,
        )
        _, metrics = train(dataset, config)
        assert metrics[-1].probe_accuracy > 0.95

    def test_zero_learning_rate_keeps_parameters(self):
        dataset = SyntheticDataset.gaussian_blobs(2, 30, 3, seed=2)
        config = TrainConfig(
            mixture=MixtureParams(0.9, 0.5, 0.5),
            epochs=3,
            learning_rate=0.0,
            anchors_per_step=8,
            n_negatives=8,
            noise_scale=0.3,
            seed=8,
        )
        params, _ = train(dataset, config)
        fresh_rng = np.random.default_rng(np.random.SeedSequence(config.seed))
        fresh_rng.permutation(dataset.points.shape[0])  # replay the split draw
        sizes = (3,) + config.hidden_sizes + (config.embed_dim,)
        initial = EncoderParams.init_random(sizes, config.t, fresh_rng)
        for got, want in zip(params.weights + params.biases, initial.weights + initial.biases):
            assert np.array_equal(got, want)
        # unchanged parameters keep the loss on a fixed batch unchanged
        rng = np.random.default_rng(3)
        batch = (rng.standard_normal(3), rng.standard_normal(3), rng.standard_normal((5, 3)))
        before = loss_and_grad(initial, *batch, config.mixture)[0]
        after = loss_and_grad(params, *batch, config.mixture)[0]
        assert before == after

    def test_reweighted_run_not_worse_than_plain_by_more_than_one_point(self):
        dataset = SyntheticDataset.gaussian_blobs(4, 40, 6, seed=5)
        common = dict(
            epochs=60,
            learning_rate=0.5,
            anchors_per_step=16,
            n_negatives=24,
            noise_scale=0.3,
            seed=17,
        )
        weighted = TrainConfig(
            mixture=MixtureParams(0.9, beta_from_classes(4), 0.25), **common
        )
        plain = TrainConfig(
            mixture=MixtureParams(0.9, 0.5, 0.25), unit_weights=True, **common
        )
        _, metrics_weighted = train(dataset, weighted)
        _, metrics_plain = train(dataset, plain)
        assert metrics_weighted[-1].probe_accuracy >= metrics_plain[-1].probe_accuracy - 0.01

    def test_alpha_estimate_trends_up_early(self):
        # hard enough that the initial random encoder sits well below the
        # AUC ceiling; trend judged on window means, not per-step moves
        dataset = SyntheticDataset.gaussian_blobs(
            2, 60, 8, separation=1.0, cluster_sd=1.0, seed=6
        )
        config = TrainConfig(
            mixture=MixtureParams(0.9, 0.5, 0.5),
            epochs=40,
            learning_rate=0.3,
            anchors_per_step=16,
            n_negatives=16,
            noise_scale=1.0,
            seed=9,
            probe_anchors=40,
        )
        _, metrics = train(dataset, config)
        series = np.array([m.alpha_hat for m in metrics])
        assert series[-8:].mean() >= series[:8].mean()

    def test_divergence_reports_epoch(self):
        points = np.array([[1.0, 1.0], [math.nan, 0.0], [0.0, 1.0], [1.0, 0.0]] * 4)
        labels = np.array([0, 1, 0, 1] * 4)
        dataset = SyntheticDataset(points, labels, 2)
        config = TrainConfig(
            mixture=MixtureParams(0.9, 0.5, 0.5),
            epochs=2,
            learning_rate=0.1,
            anchors_per_step=4,
            n_negatives=4,
            noise_scale=0.1,
            seed=10,
            estimate_alpha=False,
        )
        with pytest.raises(RuntimeError, match="epoch"):
            train(dataset, config)


class TestPersistence:
    def test_checkpoint_round_trip(self, tmp_path):
        rng = np.random.default_rng(14)
        params = EncoderParams.init_random((5, 8, 4), 0.5, rng)
        path = tmp_path / "encoder.bin"
        save_params(params, path)
        loaded = load_params(path)
        assert loaded.t == params.t
        for got, want in zip(loaded.weights + loaded.biases, params.weights + params.biases):
            assert np.array_equal(got, want)

    def test_checkpoint_bytes_deterministic(self, tmp_path):
        rng = np.random.default_rng(15)
        params = EncoderParams.init_random((3, 4, 2), 1.0, rng)
        a, b = tmp_path / "a.bin", tmp_path / "b.bin"
        save_params(params, a)
        save_params(params, b)
        assert a.read_bytes() == b.read_bytes()

    def test_metrics_csv(self, tmp_path):
        from bcl.trainer import EpochMetrics

        path = tmp_path / "metrics.csv"
        write_metrics_csv([EpochMetrics(0, 1.25, 0.8, 0.5)], path)
        lines = path.read_text().splitlines()
        assert lines[0] == "epoch,loss,alpha_hat,probe_accuracy"
        assert lines[1] == "0,1.25,0.8,0.5"
