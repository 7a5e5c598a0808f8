"""Tests for scenario forecasting: inflow prediction and Bayes updates."""

import numpy as np
import pytest
from gridoracle import twoplayer_grid

from creditband.errors import DegenerateN
from creditband.forecast import (
    InflowForecast,
    Scenario,
    ScenarioSet,
    aggregate_flow,
    bayes_update,
    likelihood,
    predict_inflows,
)
from creditband.optimizer import solve_coupled
from creditband.profiles import GAMMA_BUMP_AMPLITUDE, gamma_base
from creditband.utility import APP_KINDS, UtilityModel, default_app_params

UNIFORM4 = np.array([0.25, 0.25, 0.25, 0.25])


def make_scenario(sid, gamma, prob, probs=None):
    gamma = np.asarray(gamma, dtype=float)
    if probs is None:
        probs = np.tile(UNIFORM4, (gamma.shape[0], 1))
    return Scenario(id=sid, gamma_agg=gamma, app_probs_agg=probs, prob=prob)


def make_own_model(gamma):
    gamma = np.asarray(gamma, dtype=float)
    probs = np.tile(UNIFORM4, (gamma.shape[0], 1))
    return UtilityModel(gamma=gamma, app_probs=probs, params=default_app_params())


# ---------------------------------------------------------------- likelihood

def test_likelihood_exact_match_takes_all_mass():
    np.testing.assert_allclose(likelihood(0.0, [0.0, 10.0]), [1.0, 0.0])
    np.testing.assert_allclose(likelihood(10.0, [0.0, 10.0]), [0.0, 1.0])


def test_likelihood_equidistant_splits_evenly():
    np.testing.assert_allclose(likelihood(5.0, [0.0, 10.0]), [0.5, 0.5])


def test_likelihood_four_scenarios_arithmetic():
    # distances to (0, 2, 4, 8) from 3: d^2 = (9, 1, 1, 25), sum 36
    got = likelihood(3.0, [0.0, 2.0, 4.0, 8.0])
    want = np.array([27.0, 35.0, 35.0, 11.0]) / 108.0
    np.testing.assert_allclose(got, want, rtol=0, atol=1e-15)


def test_likelihood_is_probability_vector():
    rng = np.random.default_rng(7)
    for _ in range(200):
        S = int(rng.integers(2, 8))
        pred = rng.uniform(-5, 5, S)
        obs = float(rng.uniform(-6, 6))
        p = likelihood(obs, pred)
        assert np.all(p >= -1e-15)
        assert abs(p.sum() - 1.0) <= 1e-12


def test_likelihood_degenerate_spreads_uniformly():
    np.testing.assert_allclose(likelihood(2.0, [2.0, 2.0, 2.0]), np.full(3, 1 / 3))


def test_likelihood_requires_two_scenarios():
    with pytest.raises(ValueError):
        likelihood(1.0, [1.0])


# ---------------------------------------------------------------- scenario sets

def test_scenario_set_validation():
    with pytest.raises(ValueError):
        ScenarioSet([make_scenario("a", [1.0], 0.7), make_scenario("b", [1.0], 0.7)])
    with pytest.raises(ValueError):
        make_scenario("neg", [1.0], -0.1)
    with pytest.raises(ValueError):
        Scenario(id="shape", gamma_agg=np.ones(3), app_probs_agg=np.ones((2, 4)) / 4,
                 prob=1.0)
    with pytest.raises(ValueError):
        ScenarioSet(
            [make_scenario("a", [1.0], 0.5), make_scenario("b", [1.0], 0.5)],
            posteriors=np.ones((3, 2)) / 2,
        )


def test_posteriors_default_to_tiled_priors():
    ss = ScenarioSet([make_scenario("a", [1.0], 0.3), make_scenario("b", [1.0], 0.7)])
    assert ss.posteriors.shape == (12, 2)
    np.testing.assert_allclose(ss.posteriors, np.tile([0.3, 0.7], (12, 1)))
    np.testing.assert_allclose(ss.probs_for(25), [0.3, 0.7])


def test_with_slot_leaves_original_unchanged():
    ss = ScenarioSet([make_scenario("a", [1.0], 0.5), make_scenario("b", [1.0], 0.5)])
    ss2 = ss.with_slot(3, np.array([0.9, 0.1]))
    np.testing.assert_allclose(ss.posteriors[3], [0.5, 0.5])
    np.testing.assert_allclose(ss2.posteriors[3], [0.9, 0.1])
    np.testing.assert_allclose(ss2.posteriors[4], [0.5, 0.5])


# ---------------------------------------------------------------- bayes updates

def two_scenario_set(p0, p1, slots=12):
    return ScenarioSet(
        [make_scenario("s0", [1.0], p0), make_scenario("s1", [1.0], p1)],
        slots_per_day=slots,
    )


def test_bayes_certain_likelihood_gives_point_mass():
    ss = two_scenario_set(0.5, 0.5)
    # observation exactly on scenario 0's prediction: likelihood (1, 0)
    ss = bayes_update(ss, 3.0, period=0, predictions=[3.0, 7.0])
    np.testing.assert_allclose(ss.posteriors[0], [1.0, 0.0])


def test_bayes_uninformative_likelihood_keeps_prior():
    ss = two_scenario_set(0.9, 0.1)
    ss = bayes_update(ss, 3.0, period=0, predictions=[2.0, 4.0])
    np.testing.assert_allclose(ss.posteriors[0], [0.9, 0.1])


def test_bayes_repeated_updates_compound():
    # predictions (1, 3) with observation sqrt(3) give likelihood (3/4, 1/4)
    ss = two_scenario_set(0.5, 0.5)
    obs = float(np.sqrt(3.0))
    for _ in range(3):
        ss = bayes_update(ss, obs, period=5, predictions=[1.0, 3.0])
    want = np.array([0.75**3 * 0.5, 0.25**3 * 0.5])
    want /= want.sum()                                   # (27/28, 1/28)
    np.testing.assert_allclose(ss.posteriors[5], want, rtol=1e-12)
    np.testing.assert_allclose(ss.posteriors[5], [27 / 28, 1 / 28], rtol=1e-12)


def test_bayes_slots_are_independent():
    ss = two_scenario_set(0.5, 0.5)
    ss = bayes_update(ss, 3.0, period=0, predictions=[3.0, 7.0])
    ss = bayes_update(ss, 7.0, period=13, predictions=[3.0, 7.0])
    np.testing.assert_allclose(ss.posteriors[0], [1.0, 0.0])
    np.testing.assert_allclose(ss.posteriors[1], [0.0, 1.0])
    for slot in range(2, 12):
        np.testing.assert_allclose(ss.posteriors[slot], [0.5, 0.5])


def test_bayes_zero_posterior_restarts_from_likelihood():
    # prior is a point mass on s0 but the evidence exactly matches s1
    ss = two_scenario_set(1.0, 0.0)
    ss = bayes_update(ss, 3.0, period=2, predictions=[5.0, 3.0])
    np.testing.assert_allclose(ss.posteriors[2], [0.0, 1.0])


def test_bayes_preserves_zero_prior_mass():
    ss = ScenarioSet(
        [make_scenario("a", [1.0], 0.0), make_scenario("b", [1.0], 0.4),
         make_scenario("c", [1.0], 0.6)]
    )
    ss = bayes_update(ss, 3.0, period=0, predictions=[1.0, 2.0, 8.0])
    post = ss.posteriors[0]
    assert post[0] == 0.0
    # positive-prior scenarios renormalize in likelihood*prior proportion
    np.testing.assert_allclose(post[1] / post[2], (0.4 * 29 / 60) / (0.6 * 5 / 60),
                               rtol=1e-12)
    assert abs(post.sum() - 1.0) <= 1e-12


def test_bayes_accepts_forecast_object():
    ss = two_scenario_set(0.5, 0.5)
    fc = InflowForecast(
        start=4,
        expected=np.array([5.0, 5.0]),
        per_scenario=np.array([[3.0, 1.0], [7.0, 9.0]]),
        scenario_ids=("s0", "s1"),
    )
    direct = bayes_update(ss, 1.0, period=5, predictions=[1.0, 9.0])
    via_fc = bayes_update(ss, 1.0, period=5, predictions=fc)
    np.testing.assert_allclose(via_fc.posteriors, direct.posteriors)
    with pytest.raises(ValueError):
        bayes_update(ss, 1.0, period=6, predictions=fc)


def test_bayes_consistency_recovers_true_scenario():
    # data generated by one scenario: posterior mass on it should grow
    wins = 0
    runs = 100
    for seed in range(runs):
        rng = np.random.default_rng(1000 + seed)
        pred = rng.uniform(0.0, 2.0, (12, 3))
        truth = int(rng.integers(3))
        ss = ScenarioSet([make_scenario(f"s{k}", [1.0], 1 / 3) for k in range(3)])
        for p in range(36):
            slot = p % 12
            obs = pred[slot, truth] + rng.normal(0.0, 0.02)
            ss = bayes_update(ss, obs, period=p, predictions=pred[slot])
        final = ss.posteriors[:, truth].mean()
        if final > 1 / 3:
            wins += 1
    assert wins >= 95, f"posterior concentrated on truth in only {wins}/{runs} runs"


# ---------------------------------------------------------------- inflow prediction

def test_predict_rejects_degenerate_population():
    ss = ScenarioSet([make_scenario("a", np.ones(2), 1.0)])
    own = make_own_model(np.ones(2))
    with pytest.raises(DegenerateN):
        predict_inflows(own, 0.5, ss, 0, 2, n=1, total_credits=1.0, cap=2.0)


def test_predict_zero_weight_scenario_never_spends():
    ss = ScenarioSet([make_scenario("idle", np.zeros(4), 1.0)])
    own = make_own_model([1.0, 2.0, 1.5, 0.5])
    fc = predict_inflows(own, 0.5, ss, 0, 3, n=16, total_credits=8.0, cap=32.0)
    np.testing.assert_allclose(fc.per_scenario, 0.0)
    np.testing.assert_allclose(fc.expected, 0.0)
    assert fc.scenario_ids == ("idle",)
    assert fc.start == 0


def test_predict_mixes_scenarios_with_slot_posterior():
    busy = make_scenario("busy", np.full(2, 1.5), 0.5)
    idle = make_scenario("idle", np.zeros(2), 0.5)
    ss = ScenarioSet([busy, idle])
    own = make_own_model([1.0, 1.0])
    fc = predict_inflows(own, 0.5, ss, 0, 2, n=4, total_credits=2.0, cap=32.0)
    assert np.all(fc.per_scenario[0] > 0)
    np.testing.assert_allclose(fc.per_scenario[1], 0.0)
    np.testing.assert_allclose(fc.expected, 0.5 * fc.per_scenario[0], rtol=1e-12)
    # point mass on the busy scenario reproduces its prediction exactly
    point = ScenarioSet([busy, idle], posteriors=np.tile([1.0, 0.0], (12, 1)))
    fc2 = predict_inflows(own, 0.5, point, 0, 2, n=4, total_credits=2.0, cap=32.0)
    np.testing.assert_allclose(fc2.expected, fc2.per_scenario[0], rtol=1e-12)
    np.testing.assert_allclose(fc2.per_scenario, fc.per_scenario, rtol=1e-9)


def test_predict_uses_slot_of_each_period():
    # posterior flips to the busy scenario only on slot 1
    busy = make_scenario("busy", np.full(2, 1.5), 0.5)
    idle = make_scenario("idle", np.zeros(2), 0.5)
    post = np.tile([0.0, 1.0], (12, 1))
    post[1] = [1.0, 0.0]
    ss = ScenarioSet([busy, idle], posteriors=post)
    own = make_own_model([1.0, 1.0])
    fc = predict_inflows(own, 0.5, ss, 0, 2, n=4, total_credits=2.0, cap=32.0)
    assert fc.expected[0] == 0.0
    np.testing.assert_allclose(fc.expected[1], fc.per_scenario[0, 1], rtol=1e-12)


def test_coupled_solve_matches_twoplayer_grid():
    n = 16
    flow = aggregate_flow(n)
    rng = np.random.default_rng(11)
    for trial in range(4):
        gamma_own = rng.uniform(0.5, 2.0, 2)
        gamma_agg = rng.uniform(0.5, 2.0, 2)
        own = make_own_model(gamma_own)
        agg = make_own_model(gamma_agg)
        b0 = np.array([0.5, 2.0])
        caps = np.array([32.0, (n - 1) * 32.0])
        plan = solve_coupled([own, agg], b0, caps, flow, 0, 2)
        obj, _ = twoplayer_grid([own, agg], b0, flow, 0, 2, res=0.01)
        assert plan.objective >= obj - 1e-6
        assert abs(plan.objective - obj) <= 1e-3 * abs(obj)


def test_predict_single_app_scenarios_cross_checked():
    # one-hot app-mix hypotheses about everyone else, peak-hour weights
    n = 16
    start, T = 5, 2
    gamma = gamma_base(12)
    assert GAMMA_BUMP_AMPLITUDE > 0 and gamma.max() > 2.0
    scens = []
    for k, kind in enumerate(APP_KINDS):
        probs = np.zeros((12, 4))
        probs[:, k] = 1.0
        scens.append(Scenario(id=kind, gamma_agg=gamma, app_probs_agg=probs,
                              prob=0.25))
    ss = ScenarioSet(scens)
    own = make_own_model(gamma)
    own_budget, total = 0.5, 2.5
    fc = predict_inflows(own, own_budget, ss, start, T, n=n, total_credits=total,
                         cap=32.0)
    assert np.all(fc.per_scenario >= 0)
    assert fc.per_scenario.shape == (4, T)
    flow = aggregate_flow(n)
    inv = 1.0 / (n - 1)
    for s, scen in enumerate(ss.scenarios):
        agg = UtilityModel(gamma=scen.gamma_agg, app_probs=scen.app_probs_agg,
                           params=own.params)
        b0 = np.array([own_budget, total - own_budget])
        caps = np.array([32.0, (n - 1) * 32.0])
        plan = solve_coupled([own, agg], b0, caps, flow, start, T)
        np.testing.assert_allclose(fc.per_scenario[s], inv * plan.rates[1],
                                   rtol=0, atol=1e-12)
        obj, _ = twoplayer_grid([own, agg], b0, flow, start, T, res=0.01)
        assert plan.objective >= obj - 1e-6
        assert abs(plan.objective - obj) <= 1e-3 * abs(obj)
    # expected inflow under the uniform prior is the plain scenario mean
    np.testing.assert_allclose(fc.expected, fc.per_scenario.mean(axis=0), rtol=1e-12)


def test_predict_attaches_scenario_id_to_solver_errors():
    bad = Scenario(id="broken", gamma_agg=np.ones(1), app_probs_agg=np.ones((1, 4)) / 4,
                   prob=1.0)
    ss = ScenarioSet([bad])
    own = make_own_model(np.ones(4))
    # window [0, 2) runs past the scenario's one-period profile
    with pytest.raises(Exception) as exc_info:
        predict_inflows(own, 0.5, ss, 0, 2, n=4, total_credits=2.0, cap=32.0)
    assert getattr(exc_info.value, "scenario_id", None) == "broken"
