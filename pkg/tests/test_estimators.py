"""Losses and true-negative mean estimators: exact cases and properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcl.estimators import (
    Label,
    LabeledScore,
    ScoreBatch,
    contrastive_loss,
    ordered_sum,
    theta_bcl,
    theta_biased,
    theta_dcl,
    theta_sup,
)

scores_st = st.lists(
    st.floats(min_value=1e-3, max_value=1e3, allow_nan=False, allow_infinity=False),
    min_size=1,
    max_size=24,
)


class TestContrastiveLoss:
    def test_unit_weights_equal_scores(self):
        batch = ScoreBatch(2.0, np.array([1.0, 1.0]))
        assert contrastive_loss(batch, [1.0, 1.0]) == pytest.approx(math.log(2.0), rel=1e-15)

    def test_zero_weights_give_exactly_zero(self):
        batch = ScoreBatch(2.0, np.array([1.0, 1.0]))
        assert contrastive_loss(batch, [0.0, 0.0]) == 0.0

    def test_symmetric_case(self):
        batch = ScoreBatch(1.0, np.array([1.0, 1.0, 1.0]))
        assert contrastive_loss(batch, [1.0, 1.0, 1.0]) == pytest.approx(math.log(4.0), rel=1e-15)

    def test_strictly_positive_for_positive_weighted_sum(self):
        batch = ScoreBatch(100.0, np.array([1e-3]))
        assert contrastive_loss(batch, [1e-6]) > 0.0

    def test_length_mismatch_rejected(self):
        batch = ScoreBatch(2.0, np.array([1.0, 1.0]))
        with pytest.raises(ValueError, match="length"):
            contrastive_loss(batch, [1.0])

    def test_non_finite_weight_rejected(self):
        batch = ScoreBatch(2.0, np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            contrastive_loss(batch, [1.0, math.nan])

    def test_negative_weight_rejected(self):
        batch = ScoreBatch(2.0, np.array([1.0, 1.0]))
        with pytest.raises(ValueError):
            contrastive_loss(batch, [1.0, -0.5])

    def test_non_positive_score_rejected(self):
        with pytest.raises(ValueError):
            ScoreBatch(2.0, np.array([1.0, -1.0]))
        with pytest.raises(ValueError):
            ScoreBatch(0.0, np.array([1.0]))
        with pytest.raises(ValueError):
            ScoreBatch(math.inf, np.array([1.0]))

    @given(scores_st, st.randoms(use_true_random=False))
    def test_permutation_invariant_with_unit_weights(self, scores, rnd):
        shuffled = list(scores)
        rnd.shuffle(shuffled)
        a = contrastive_loss(ScoreBatch(2.0, np.array(scores)), np.ones(len(scores)))
        b = contrastive_loss(ScoreBatch(2.0, np.array(shuffled)), np.ones(len(scores)))
        assert a == pytest.approx(b, rel=1e-12)

    @given(
        scores_st,
        st.data(),
        st.floats(min_value=0.01, max_value=10.0),
    )
    def test_monotone_in_weights_and_scores(self, scores, data, bump):
        n = len(scores)
        weights = np.full(n, 0.7)
        idx = data.draw(st.integers(min_value=0, max_value=n - 1))
        batch = ScoreBatch(2.0, np.array(scores))
        base = contrastive_loss(batch, weights)

        heavier = weights.copy()
        heavier[idx] += bump
        assert contrastive_loss(batch, heavier) >= base - 1e-12

        bigger = np.array(scores)
        bigger[idx] += bump
        assert contrastive_loss(ScoreBatch(2.0, bigger), weights) >= base - 1e-12


class TestThetaBiased:
    def test_mean(self):
        assert theta_biased([1.0, 2.0, 3.0]) == 2.0

    def test_singleton(self):
        assert theta_biased([5.0]) == 5.0

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            theta_biased([])

    def test_matches_population_mean_by_quadrature(self):
        # One slide-free anchor with 1e5 unlabeled draws; the population
        # mean is integrated by hand from the order-statistic mixture
        # (uniform base on [-0.5, 0.5]).
        from scipy import integrate

        from bcl.simulate import SimConfig, UniformProposal, generate_batch
        from bcl.weights import MixtureParams

        alpha, tau_pos, t = 0.9, 0.1, 0.5
        config = SimConfig(
            mixture=MixtureParams(alpha, 0.5, tau_pos),
            proposal=UniformProposal(-0.5, 0.5, slide=0.0),
            t=t,
            n_anchors=1,
            n_negatives=100_000,
            seed=2024,
        )
        (anchor,) = generate_batch(config)

        def unlabeled_density(x):
            u = x + 0.5  # uniform CDF on [-0.5, 0.5]
            tn = alpha * (1 - u) + (1 - alpha) * u
            fn = alpha * u + (1 - alpha) * (1 - u)
            return 2.0 * ((1 - tau_pos) * tn + tau_pos * fn)

        expected, _ = integrate.quad(lambda x: math.exp(x / t) * unlabeled_density(x), -0.5, 0.5)
        assert theta_biased(anchor.mapped) == pytest.approx(expected, rel=0.01)


class TestThetaDcl:
    def test_zero_prior_equals_biased(self):
        negs = [1.0, 2.0, 3.0]
        assert theta_dcl(negs, [9.0], 0.0) == theta_biased(negs)

    def test_hand_evaluated(self):
        assert theta_dcl([2.0, 4.0], [3.0], 0.5) == pytest.approx(3.0, rel=1e-12)

    def test_sign_escape(self):
        assert theta_dcl([1.0, 1.0], [10.0], 0.5) == pytest.approx(-8.0, rel=1e-12)

    def test_floor_flag(self):
        assert theta_dcl([1.0, 1.0], [10.0], 0.5, floor=0.0) == 0.0

    def test_prior_one_rejected(self):
        with pytest.raises(ValueError):
            theta_dcl([1.0], [1.0], 1.0)

    @given(scores_st, scores_st)
    def test_zero_prior_identity_for_all_inputs(self, negs, extras):
        assert theta_dcl(negs, extras, 0.0) == theta_biased(negs)


class TestThetaBcl:
    def test_unit_weights_equal_biased(self):
        negs = [1.5, 2.0, 7.0]
        assert theta_bcl(negs, np.ones(3)) == theta_biased(negs)

    def test_hand_evaluated(self):
        assert theta_bcl([2.0, 4.0], [1.5, 0.5]) == pytest.approx(2.5, rel=1e-15)

    def test_length_mismatch_rejected(self):
        with pytest.raises(ValueError, match="length"):
            theta_bcl([1.0, 2.0], [1.0])

    @given(scores_st)
    def test_unit_weight_identity_for_all_inputs(self, negs):
        assert theta_bcl(negs, np.ones(len(negs))) == theta_biased(negs)

    def test_beats_biased_on_majority_of_anchors(self):
        # Ground-truth labels from the generator act as the oracle.
        from bcl.simulate import default_config, generate_batch
        from bcl.weights import weight_batch

        config = default_config(seed=77)
        batch = generate_batch(config)
        wins = 0
        total = 0
        for anchor in batch:
            if not np.any(anchor.is_tn):
                continue
            sup = theta_sup(anchor.labeled())
            bcl = theta_bcl(anchor.mapped, weight_batch(anchor.mapped, config.mixture))
            biased = theta_biased(anchor.mapped)
            wins += abs(bcl - sup) < abs(biased - sup)
            total += 1
        assert wins > total / 2


class TestThetaSup:
    def test_mean_of_tn_subset(self):
        scores = [
            LabeledScore(2.0, Label.TN),
            LabeledScore(4.0, Label.FN),
            LabeledScore(6.0, Label.TN),
        ]
        assert theta_sup(scores) == 4.0

    def test_all_tn_equals_biased(self):
        values = [1.0, 2.5, 3.5]
        scores = [LabeledScore(v, Label.TN) for v in values]
        assert theta_sup(scores) == theta_biased(values)

    def test_singleton(self):
        assert theta_sup([LabeledScore(5.0, Label.TN)]) == 5.0

    def test_no_tn_rejected(self):
        with pytest.raises(ValueError, match="undefined"):
            theta_sup([LabeledScore(1.0, Label.FN)])

    def test_labeled_score_validation(self):
        with pytest.raises(ValueError):
            LabeledScore(-1.0, Label.TN)
        with pytest.raises(ValueError):
            LabeledScore(1.0, "TN")


@given(scores_st, st.randoms(use_true_random=False))
@settings(max_examples=50)
def test_estimators_permutation_invariant(scores, rnd):
    shuffled = list(scores)
    rnd.shuffle(shuffled)
    assert theta_biased(scores) == pytest.approx(theta_biased(shuffled), rel=1e-12)
    assert theta_dcl(scores, [2.0], 0.3) == pytest.approx(theta_dcl(shuffled, [2.0], 0.3), rel=1e-12)
    paired = sorted(zip(scores, np.linspace(0.5, 1.5, len(scores))))
    rnd.shuffle(paired)
    if paired:
        s, w = zip(*paired)
        reference = sorted(paired)
        s0, w0 = zip(*reference)
        assert theta_bcl(s, w) == pytest.approx(theta_bcl(s0, w0), rel=1e-12)


def test_ordered_sum_is_left_to_right():
    values = [1e16, 1.0, -1e16, 1.0]
    running = 0.0
    for v in values:
        running += v
    assert ordered_sum(values) == running
    assert ordered_sum([]) == 0.0
