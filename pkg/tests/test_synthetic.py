"""Tests for the three-class planted model: closed forms vs independent oracles."""

import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossfeat.numerics import RngStream, std_normal_cdf
from crossfeat.synthetic import (CheckRecord, GroupVerification,
                                 LinearHypothesis, SyntheticParams,
                                 adversarial_batch, eps0, eps1,
                                 frozen_linear_coefficients, linear_classifier,
                                 linear_logits, ls_loss_closed, ls_loss_mc,
                                 ls_margin_samples, ls_optimal_weights, margin_loss,
                                 max_gauss_mean_mc, optimal_weights,
                                 pair_margin_prob, projected_gd_oracle,
                                 replicate_groups, robust_loss_closed,
                                 robust_loss_mc, robust_margin_samples,
                                 run_verification, sample, sample_mixed,
                                 worst_case_delta)
from crossfeat.model import forward

DEFAULTS = dict(mu=1.0, sigma=math.sqrt(math.pi) / 2.0, lam=1.0)


class TestParams:
    def test_validation(self):
        with pytest.raises(ValueError, match="mu"):
            SyntheticParams(mu=0.0)
        with pytest.raises(ValueError, match="sigma"):
            SyntheticParams(sigma=-1.0)
        with pytest.raises(ValueError, match="sigma"):
            SyntheticParams(mu=1.0, sigma=math.sqrt(math.pi))
        with pytest.raises(ValueError, match="eps"):
            SyntheticParams(eps=0.5)
        with pytest.raises(ValueError, match="lam"):
            SyntheticParams(lam=0.0)
        with pytest.raises(ValueError, match="beta"):
            SyntheticParams(beta=1.0 / 3.0)

    def test_sigma_term_is_sigma_over_sqrt_pi(self):
        assert SyntheticParams(**DEFAULTS).sigma_term == pytest.approx(0.5, abs=1e-15)
        assert SyntheticParams(sigma=0.35).sigma_term == pytest.approx(
            0.35 / math.sqrt(math.pi), abs=1e-15)

    def test_hypothesis_rejects_negative_weights(self):
        with pytest.raises(ValueError, match="non-negative"):
            LinearHypothesis(-0.1, 0.0)


class TestSampling:
    def test_zero_pattern_and_labels(self):
        p = SyntheticParams(**DEFAULTS)
        batch = sample(p, 2, 100, RngStream(0, stream_id=70))
        assert batch.x_e.shape == (100, 3) and batch.x_c.shape == (100, 3)
        assert np.all(batch.labels == 2)
        # Class 2 populates x_E2 and the shared coords of classes 1 and 3.
        assert np.all(batch.x_e[:, 0] == 0.0) and np.all(batch.x_e[:, 2] == 0.0)
        assert np.all(batch.x_c[:, 1] == 0.0)
        assert np.all(batch.x_e[:, 1] != 0.0)
        assert np.all(batch.x_c[:, 0] != 0.0) and np.all(batch.x_c[:, 2] != 0.0)

    def test_populated_moments(self):
        p = SyntheticParams(**DEFAULTS)
        n = 50_000
        batch = sample(p, 1, n, RngStream(1, stream_id=70))
        populated = np.concatenate([batch.x_e[:, 0], batch.x_c[:, 1], batch.x_c[:, 2]])
        se = p.sigma / math.sqrt(len(populated))
        assert abs(populated.mean() - p.mu) <= 4.0 * se
        assert abs(populated.std(ddof=1) - p.sigma) <= 4.0 * se

    def test_inputs_order_is_evidence_then_shared(self):
        p = SyntheticParams(**DEFAULTS)
        batch = sample(p, 1, 5, RngStream(2, stream_id=70))
        flat = batch.inputs()
        assert flat.shape == (5, 6)
        assert np.array_equal(flat[:, :3], batch.x_e)
        assert np.array_equal(flat[:, 3:], batch.x_c)

    def test_mixed_labels_roughly_uniform_and_deterministic(self):
        p = SyntheticParams(**DEFAULTS)
        a = sample_mixed(p, 9_000, RngStream(3, stream_id=70))
        b = sample_mixed(p, 9_000, RngStream(3, stream_id=70))
        assert np.array_equal(a.inputs(), b.inputs())
        counts = np.bincount(a.labels, minlength=4)[1:]
        assert counts.sum() == 9_000
        assert np.all(np.abs(counts - 3_000) < 5.0 * math.sqrt(9_000 * (1 / 3) * (2 / 3)))

    def test_invalid_arguments(self):
        p = SyntheticParams(**DEFAULTS)
        with pytest.raises(ValueError, match="class"):
            sample(p, 4, 10, RngStream(0))
        with pytest.raises(ValueError, match="non-negative"):
            sample(p, 1, -1, RngStream(0))


class TestLinearScorer:
    def test_logits_hand_example(self):
        h = LinearHypothesis(2.0, 0.5)
        x_e = np.array([[1.0, 0.0, 0.0]])
        x_c = np.array([[0.0, 3.0, 4.0]])
        # f_i = w1 x_Ei + w2 * sum_{j != i} x_Cj
        expected = [[2.0 * 1 + 0.5 * 7, 0.5 * 4, 0.5 * 3]]
        assert np.allclose(linear_logits(h, x_e, x_c), expected, atol=1e-15)

    def test_linear_classifier_agrees_with_linear_logits(self):
        h = LinearHypothesis(1.3, 0.4)
        p = SyntheticParams(**DEFAULTS)
        batch = sample_mixed(p, 64, RngStream(4, stream_id=70))
        direct = linear_logits(h, batch.x_e, batch.x_c)
        as_model = forward(linear_classifier(h), batch.inputs())
        assert np.allclose(direct, as_model, atol=1e-12)

    def test_margin_loss_hand_example(self):
        h = LinearHypothesis(1.0, 0.0)
        x_e = np.array([[2.0, 0.5, -1.0]])
        x_c = np.zeros((1, 3))
        # logits (2, 0.5, -1); label 1 -> best other minus own = 0.5 - 2.
        got = margin_loss(h, x_e, x_c, np.array([1]))
        assert got[0] == pytest.approx(-1.5, abs=1e-15)


class TestWorstCaseDelta:
    def test_class_one_pattern(self):
        p = SyntheticParams(eps=0.25, **DEFAULTS)
        delta = worst_case_delta(p, class_i=1)
        assert np.allclose(delta, [-0.25, 0.25, 0.25, 0.25, -0.25, -0.25],
                           atol=1e-15)

    def test_class_two_pattern(self):
        p = SyntheticParams(eps=0.1, **DEFAULTS)
        delta = worst_case_delta(p, class_i=2)
        assert np.allclose(delta, [0.1, -0.1, 0.1, -0.1, 0.1, -0.1], atol=1e-15)

    def test_invalid_class(self):
        with pytest.raises(ValueError, match="class"):
            worst_case_delta(SyntheticParams(**DEFAULTS), class_i=0)

    def test_dominates_random_perturbations(self):
        gen = RngStream(5, stream_id=70).generator
        p = SyntheticParams(eps=0.2, **DEFAULTS)
        for trial in range(10):
            h = LinearHypothesis(float(gen.uniform(0, 2)), float(gen.uniform(0, 2)))
            class_i = int(gen.integers(1, 4))
            one = sample(p, class_i, 1, RngStream(6, stream_id=70 + trial))
            delta = worst_case_delta(p, class_i=class_i)
            best = margin_loss(h, one.x_e + delta[:3], one.x_c + delta[3:],
                               one.labels)[0]
            rand = gen.uniform(-p.eps, p.eps, size=(2_000, 6))
            vals = margin_loss(h, one.x_e + rand[:, :3], one.x_c + rand[:, 3:],
                               np.full(2_000, class_i, dtype=np.int64))
            assert vals.max() <= best + 1e-12

    def test_adversarial_batch_applies_per_class_delta(self):
        p = SyntheticParams(eps=0.3, **DEFAULTS)
        batch = sample_mixed(p, 50, RngStream(7, stream_id=70))
        adv = adversarial_batch(p, batch)
        for class_i in (1, 2, 3):
            mask = batch.labels == class_i
            delta = worst_case_delta(p, class_i=class_i)
            assert np.allclose(adv.x_e[mask], batch.x_e[mask] + delta[:3],
                               atol=1e-15)
            assert np.allclose(adv.x_c[mask], batch.x_c[mask] + delta[3:],
                               atol=1e-15)


class TestRobustLoss:
    def test_frozen_spot_value(self):
        # c1 = 2*0.25 - 1 = -0.5, c2 = -0.5 + 0.5 = 0, reg = 1 -> loss 0.5.
        p = SyntheticParams(eps=0.25, **DEFAULTS)
        assert robust_loss_closed(p, LinearHypothesis(1.0, 1.0)) == pytest.approx(
            0.5, abs=1e-15)

    def test_closed_matches_mc_within_three_se(self):
        p = SyntheticParams(eps=0.15, **DEFAULTS)
        h = LinearHypothesis(0.9, 0.4)
        margins = robust_margin_samples(p, h, 200_000, RngStream(8, stream_id=70))
        reg = 0.5 * p.lam * (h.w1 ** 2 + h.w2 ** 2)
        se = margins.std(ddof=1) / math.sqrt(len(margins))
        assert abs(margins.mean() + reg - robust_loss_closed(p, h)) <= 3.0 * se

    def test_mc_helper_matches_sample_mean(self):
        p = SyntheticParams(eps=0.15, **DEFAULTS)
        h = LinearHypothesis(0.9, 0.4)
        direct = robust_loss_mc(p, h, 10_000, RngStream(9, stream_id=70))
        margins = robust_margin_samples(p, h, 10_000, RngStream(9, stream_id=70))
        reg = 0.5 * p.lam * (h.w1 ** 2 + h.w2 ** 2)
        assert direct == pytest.approx(margins.mean() + reg, abs=1e-12)

    @given(w1=st.floats(0.0, 2.0), w2=st.floats(0.0, 2.0))
    @settings(max_examples=25, deadline=None)
    def test_zero_beta_smoothed_loss_reduces_to_robust(self, w1, w2):
        p = SyntheticParams(eps=0.2, beta=0.0, **DEFAULTS)
        h = LinearHypothesis(w1, w2)
        assert ls_loss_closed(p, h) == pytest.approx(robust_loss_closed(p, h),
                                                     abs=1e-12)

    def test_smoothed_closed_matches_mc_within_three_se(self):
        p = SyntheticParams(eps=0.2, beta=0.2, **DEFAULTS)
        h = LinearHypothesis(1.0, 0.5)
        samples = ls_margin_samples(p, h, 200_000, RngStream(10, stream_id=70))
        reg = 0.5 * p.lam * (h.w1 ** 2 + h.w2 ** 2)
        se = samples.std(ddof=1) / math.sqrt(len(samples))
        assert abs(samples.mean() + reg - ls_loss_closed(p, h)) <= 3.0 * se
        helper = ls_loss_mc(p, h, 10_000, RngStream(11, stream_id=70))
        assert math.isfinite(helper)


class TestOptimalWeights:
    def test_frozen_minimizers(self):
        low = optimal_weights(SyntheticParams(eps=0.1, **DEFAULTS))
        assert low.w1 == pytest.approx(0.8, abs=1e-15)
        assert low.w2 == pytest.approx(0.3, abs=1e-15)
        high = optimal_weights(SyntheticParams(eps=0.3, **DEFAULTS))
        assert high.w1 == pytest.approx(0.4, abs=1e-15)
        assert high.w2 == 0.0

    def test_collapse_radius(self):
        assert eps0(SyntheticParams(**DEFAULTS)) == pytest.approx(0.25, abs=1e-15)
        for frac in (0.26, 0.3, 0.45):
            assert optimal_weights(SyntheticParams(eps=frac, **DEFAULTS)).w2 == 0.0
        for frac in (0.05, 0.2, 0.24):
            assert optimal_weights(SyntheticParams(eps=frac, **DEFAULTS)).w2 > 0.0

    def test_frozen_smoothed_minimizer(self):
        h = ls_optimal_weights(SyntheticParams(eps=0.1, beta=0.2, **DEFAULTS))
        assert h.w1 == pytest.approx(0.66, abs=1e-15)
        assert h.w2 == pytest.approx(0.44, abs=1e-15)

    @pytest.mark.parametrize("beta", [0.1, 0.2, 0.3])
    def test_smoothed_surplus_identity(self, beta):
        p = SyntheticParams(eps=0.1, beta=beta, **DEFAULTS)
        plain = optimal_weights(SyntheticParams(eps=0.1, **DEFAULTS))
        surplus = beta * (2.0 * p.eps + p.sigma_term) / p.lam
        assert ls_optimal_weights(p).w2 - plain.w2 == pytest.approx(surplus,
                                                                    abs=1e-12)

    @pytest.mark.parametrize("beta", [0.1, 0.2, 0.3])
    def test_smoothed_collapse_radius_exceeds_plain(self, beta):
        p = SyntheticParams(beta=beta, **DEFAULTS)
        assert eps1(p) > eps0(p)

    def test_eps1_clamp(self):
        # Small sigma pushes the raw threshold beyond the admissible mu/2.
        p = SyntheticParams(mu=1.0, sigma=0.1, lam=1.0, beta=0.3)
        assert eps1(p) > 0.5
        assert eps1(p, clamp=True) == pytest.approx(0.5, abs=1e-15)

    def test_minimizer_beats_neighbors(self):
        p = SyntheticParams(eps=0.1, **DEFAULTS)
        best = optimal_weights(p)
        base = robust_loss_closed(p, best)
        for dw1, dw2 in ((0.01, 0), (-0.01, 0), (0, 0.01), (0, -0.01)):
            w1 = max(0.0, best.w1 + dw1)
            w2 = max(0.0, best.w2 + dw2)
            assert robust_loss_closed(p, LinearHypothesis(w1, w2)) >= base


class TestProjectedGdOracle:
    def test_recovers_analytic_minimum_of_quadratic(self):
        # minimize c.w + lam/2 |w|^2 over w >= 0 has solution max(0, -c/lam).
        got = projected_gd_oracle(np.array([[-1.0, -1.0]]), lam=1.0)
        assert got.w1 == pytest.approx(1.0, abs=1e-9)
        assert got.w2 == pytest.approx(1.0, abs=1e-9)

    def test_projection_pins_negative_directions_at_zero(self):
        got = projected_gd_oracle(np.array([[-0.5, 0.7]]), lam=1.0)
        assert got.w1 == pytest.approx(0.5, abs=1e-9)
        assert got.w2 == 0.0

    def test_lam_validation(self):
        with pytest.raises(ValueError, match="lam"):
            projected_gd_oracle(np.zeros((1, 2)), lam=0.0)

    def test_recovers_closed_form_from_frozen_mc_samples(self):
        p = SyntheticParams(eps=0.1, **DEFAULTS)
        coeff = frozen_linear_coefficients(p, 200_000, RngStream(12, stream_id=70))
        got = projected_gd_oracle(coeff, p.lam)
        best = optimal_weights(p)
        assert abs(got.w1 - best.w1) <= 0.05 * best.w1
        assert abs(got.w2 - best.w2) <= 0.05 * best.w2

    def test_collapsed_regime_oracle_stays_near_zero(self):
        p = SyntheticParams(eps=0.35, **DEFAULTS)
        coeff = frozen_linear_coefficients(p, 200_000, RngStream(13, stream_id=70))
        got = projected_gd_oracle(coeff, p.lam)
        assert got.w2 < 0.02 * (p.mu / p.lam)


class TestPairMarginProb:
    P = SyntheticParams(mu=1.0, sigma=0.5, lam=1.0, eps=0.25)

    def test_frozen_spot_values(self):
        assert pair_margin_prob(self.P, LinearHypothesis(1.0, 0.0)) == \
            pytest.approx(std_normal_cdf(1.0), abs=1e-12)
        assert pair_margin_prob(self.P, LinearHypothesis(1.0, 1.0)) == \
            pytest.approx(std_normal_cdf(math.sqrt(2.0)), abs=1e-12)

    def test_monotone_in_weight_ratio(self):
        probs = [pair_margin_prob(self.P, LinearHypothesis(1.0, t))
                 for t in np.linspace(0.0, 1.0, 11)]
        assert all(b >= a for a, b in zip(probs, probs[1:]))

    def test_mc_agrees_with_exact_convention(self):
        h = LinearHypothesis(1.0, 0.7)
        closed = pair_margin_prob(self.P, h)
        n = 200_000
        mc = pair_margin_prob(self.P, h, method="mc", n_samples=n,
                              rng=RngStream(14, stream_id=70))
        se = math.sqrt(closed * (1 - closed) / n)
        assert abs(mc - closed) <= 3.0 * se

    def test_paper_convention_widens_the_noise(self):
        h = LinearHypothesis(1.0, 0.7)
        exact = pair_margin_prob(self.P, h)
        paper = pair_margin_prob(self.P, h, convention="paper")
        assert paper < exact  # positive mean, larger sd -> smaller probability

    def test_error_paths(self):
        with pytest.raises(ValueError, match="w1"):
            pair_margin_prob(self.P, LinearHypothesis(0.0, 0.5))
        with pytest.raises(ValueError, match="convention"):
            pair_margin_prob(self.P, LinearHypothesis(1.0, 0.5), convention="x")
        with pytest.raises(ValueError, match="method"):
            pair_margin_prob(self.P, LinearHypothesis(1.0, 0.5), method="x")
        with pytest.raises(ValueError, match="rng"):
            pair_margin_prob(self.P, LinearHypothesis(1.0, 0.5), method="mc")


class TestMaxGaussMean:
    def test_matches_one_over_sqrt_pi(self):
        value, se = max_gauss_mean_mc(200_000, RngStream(15, stream_id=70))
        assert se > 0
        assert abs(value - 1.0 / math.sqrt(math.pi)) <= 3.0 * se


class TestReplicateGroups:
    def test_two_groups_decouple(self):
        groups = [SyntheticParams(eps=0.1, **DEFAULTS),
                  SyntheticParams(eps=0.4, **DEFAULTS)]
        gv = replicate_groups(groups, n_samples=50_000,
                              rng=RngStream(16, stream_id=70), steps=3_000)
        assert isinstance(gv, GroupVerification)
        scale = 1.0  # mu / lam
        assert gv.max_abs_err <= 0.05 * scale
        assert gv.max_rel_err(scale) == pytest.approx(gv.max_abs_err)
        # Group below the collapse radius keeps w2; group above collapses.
        assert gv.joint_oracle[0].w2 > 0.05 * scale
        assert gv.joint_oracle[1].w2 < 0.02 * scale

    def test_single_params_replication(self):
        gv = replicate_groups(SyntheticParams(eps=0.1, **DEFAULTS), k_groups=3,
                              n_samples=20_000, rng=RngStream(17, stream_id=70),
                              steps=2_000)
        assert len(gv.joint_oracle) == 3
        assert len(gv.per_group_closed) == 3

    def test_argument_validation(self):
        with pytest.raises(ValueError, match="k_groups"):
            replicate_groups(SyntheticParams(**DEFAULTS))
        with pytest.raises(ValueError, match="at least one"):
            replicate_groups([])


@pytest.fixture(scope="module")
def records():
    return run_verification(seed=0, mc_samples=50_000, oracle_steps=4_000)


class TestRunVerification:
    def test_no_failures(self, records):
        failing = [r for r in records if r.status == "fail"]
        assert not failing, [r.name for r in failing]

    def test_covers_every_check_family(self, records):
        names = {r.name for r in records}
        for expected in ("max_gauss_mean", "threshold_sign", "oracle_w1",
                         "loss_mc_vs_closed", "ls_loss_mc_vs_closed",
                         "ls_threshold_above", "ls_w2_surplus_identity",
                         "delta_dominance", "pair_margin_spot",
                         "pair_margin_monotone", "pair_margin_mc",
                         "group_decoupling"):
            assert expected in names

    def test_records_are_json_serializable(self, records):
        blob = json.dumps([r.as_dict() for r in records])
        assert json.loads(blob)[0]["name"] == records[0].name

    def test_convention_records_are_informational(self, records):
        conventions = [r for r in records
                       if r.name in ("ls_w1_coefficient_convention",
                                     "pair_margin_variance_convention")]
        assert len(conventions) == 2
        assert all(r.status == "info" for r in conventions)
