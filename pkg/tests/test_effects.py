import math

import numpy as np
import pytest

from cladescan.data import DataError
from cladescan.effects import (
    BranchEffect,
    EffectPosterior,
    FitError,
    branch_logistic_map,
    mixture_effect,
)

from oracles import reference_logistic_map


def simulate_logistic(rng, n, beta, mu=-0.5):
    e = rng.uniform(0, 2, size=n)
    p = 1.0 / (1.0 + np.exp(-(mu + beta * e)))
    y = (rng.random(n) < p).astype(int)
    if y.min() == y.max():  # ensure both classes present
        y[0] = 1 - y[0]
    return e, y


class TestBranchLogisticMap:
    def test_matches_generic_optimizer(self, rng):
        for sd in (0.2, 1.0, 5.0):
            e, y = simulate_logistic(rng, 400, 0.7)
            beta, se = branch_logistic_map(e, y, effect_prior_sd=sd)
            beta_ref, se_ref = reference_logistic_map(e, y, sd)
            assert beta == pytest.approx(beta_ref, abs=1e-6)
            assert se == pytest.approx(se_ref, rel=1e-6)

    def test_recovers_true_effect(self, rng):
        e, y = simulate_logistic(rng, 20_000, 0.5)
        beta, se = branch_logistic_map(e, y, effect_prior_sd=10.0)
        assert beta == pytest.approx(0.5, abs=4 * se)

    def test_shrinkage_monotone_in_prior_sd(self, rng):
        e, y = simulate_logistic(rng, 300, 1.0)
        betas = [
            abs(branch_logistic_map(e, y, effect_prior_sd=sd)[0])
            for sd in (0.05, 0.2, 1.0, 10.0)
        ]
        assert betas == sorted(betas)

    def test_degenerate_covariate(self):
        with pytest.raises(FitError, match="degenerate"):
            branch_logistic_map(np.ones(10), np.r_[np.ones(5), np.zeros(5)])

    def test_single_class_phenotypes(self):
        with pytest.raises(FitError, match="case and"):
            branch_logistic_map(np.arange(6, dtype=float), np.ones(6))

    def test_shape_mismatch(self):
        with pytest.raises(DataError):
            branch_logistic_map(np.zeros(3), np.zeros(4))

    def test_separated_data_still_finite(self, rng):
        # perfect separation: the prior keeps the MAP finite
        e = np.r_[np.zeros(20), 2 * np.ones(20)]
        y = np.r_[np.zeros(20), np.ones(20)].astype(int)
        beta, se = branch_logistic_map(e, y, effect_prior_sd=1.0)
        assert np.isfinite(beta) and np.isfinite(se) and beta > 0


def _effect(bid, beta, sigma, log_bf, w):
    return BranchEffect(
        branch_id=bid, beta_hat=beta, sigma_hat=sigma, log_bf=log_bf, prior_weight=w
    )


class TestMixtureEffect:
    def test_single_component_passthrough(self):
        post = mixture_effect([_effect(0, 0.4, 0.1, 2.0, 1.0)])
        assert post.beta_star == pytest.approx(0.4)
        assert post.odds_ratio == pytest.approx(math.exp(0.4))
        np.testing.assert_allclose(post.weights, [1.0])

    def test_weights_follow_bf_and_prior(self):
        comps = [
            _effect(0, 0.0, 0.1, math.log(8.0), 0.25),
            _effect(1, 1.0, 0.1, math.log(2.0), 0.25),
        ]
        post = mixture_effect(comps)
        np.testing.assert_allclose(post.weights, [0.8, 0.2])
        assert post.beta_star == pytest.approx(0.2)

    def test_density_normalized(self):
        comps = [_effect(0, 0.2, 0.15, 0.0, 0.5), _effect(1, -0.3, 0.25, 1.0, 0.5)]
        post = mixture_effect(comps)
        x = np.linspace(-3, 3, 4001)
        mass = np.trapezoid(post.density(x), x)
        assert mass == pytest.approx(1.0, abs=1e-6)

    def test_empty_raises(self):
        with pytest.raises(FitError):
            mixture_effect([])
