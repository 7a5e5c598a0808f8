"""Scenario-based forecasting of redistributed credits.

A gateway cannot see the other gateways' utility functions, so it models
"everyone else" as a single aggregated gateway whose per-period utility
coefficients come from a finite set of hypotheses (scenarios), each carrying
a probability. Predicted inflows per scenario come from a joint two-player
welfare solve; probabilities are updated from observed inflows by an
L2-discrepancy likelihood and Bayes' rule, one posterior per daily slot
(gateway behavior is assumed periodic with the day).
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CreditBandError, DegenerateN
from .optimizer import RatePlan, solve_coupled
from .utility import APP_KINDS, UtilityModel

DEFAULT_SLOTS_PER_DAY = 12


@dataclass(slots=True)
class Scenario:
    """One hypothesis about the aggregated other gateways.

    gamma_agg and app_probs_agg describe the aggregate's composite utility
    over the full experiment horizon (absolute periods); prob is the prior.
    """

    id: str
    gamma_agg: np.ndarray
    app_probs_agg: np.ndarray
    prob: float

    def __post_init__(self):
        self.gamma_agg = np.asarray(self.gamma_agg, dtype=float)
        self.app_probs_agg = np.asarray(self.app_probs_agg, dtype=float)
        if self.prob < 0:
            raise ValueError(f"scenario prior must be nonnegative, got {self.prob}")
        if self.app_probs_agg.shape != (self.gamma_agg.shape[0], len(APP_KINDS)):
            raise ValueError("scenario app mixture must cover every period")


@dataclass(slots=True)
class ScenarioSet:
    """Scenarios plus per-slot posterior probabilities.

    Posteriors for different daily slots are maintained independently; slot
    k's posterior is updated only from observations at periods p with
    p mod slots_per_day == k.
    """

    scenarios: tuple
    slots_per_day: int = DEFAULT_SLOTS_PER_DAY
    posteriors: np.ndarray | None = None

    def __post_init__(self):
        self.scenarios = tuple(self.scenarios)
        if len(self.scenarios) < 1:
            raise ValueError("need at least one scenario")
        priors = np.array([s.prob for s in self.scenarios])
        if abs(priors.sum() - 1.0) > 1e-9:
            raise ValueError(f"scenario priors must sum to 1, got {priors.sum()}")
        if self.posteriors is None:
            self.posteriors = np.tile(priors, (self.slots_per_day, 1))
        else:
            self.posteriors = np.asarray(self.posteriors, dtype=float)
            if self.posteriors.shape != (self.slots_per_day, len(self.scenarios)):
                raise ValueError("posteriors must be (slots_per_day, n_scenarios)")

    def __len__(self):
        return len(self.scenarios)

    def probs_for(self, period: int) -> np.ndarray:
        return self.posteriors[period % self.slots_per_day]

    def with_slot(self, slot: int, probs: np.ndarray) -> "ScenarioSet":
        post = self.posteriors.copy()
        post[slot] = probs
        return replace(self, posteriors=post)


@dataclass(slots=True)
class InflowForecast:
    """Per-period expected credit inflows over a window, per scenario and mixed."""

    start: int
    expected: np.ndarray      # (T,)
    per_scenario: np.ndarray  # (n_scenarios, T)
    scenario_ids: tuple


def aggregate_flow(n: int) -> np.ndarray:
    """Credit-flow matrix for (own gateway, aggregated others).

    The own gateway's spend is fully credited to the aggregate; of the
    aggregate's spend, 1/(n-1) reaches the own gateway and the remaining
    (n-2)/(n-1) recycles inside the aggregate.
    """
    inv = 1.0 / (n - 1)
    return np.array([[0.0, inv], [1.0, (n - 2) * inv]])


def predict_inflows(
    own_model: UtilityModel,
    own_budget: float,
    scenarios: ScenarioSet,
    start: int,
    T: int,
    *,
    n: int,
    total_credits: float,
    cap: float,
    engine: str = "auto",
    capacity: float | None = None,
) -> InflowForecast:
    """Forecast credits received over [start, start+T) under each scenario.

    Each scenario is solved as a joint welfare problem between the own
    gateway and the aggregate (budget total_credits - own_budget, cap scaled
    by n-1); the scenario's inflow is the aggregate's spend divided by n-1.
    The expected inflow mixes scenarios with each period's slot posterior.
    capacity, when the system limits total per-period spend to the link
    rate, adds that limit to the imagined joint solves.

    A scenario whose utility weight is identically zero over the window
    predicts zero inflow directly: gateways with nothing to gain do not
    spend. (The welfare solve would instead have the aggregate donate
    credits to relax our budget, which misrepresents self-interested
    gateways.)
    """
    if n < 2:
        raise DegenerateN(n)
    inv = 1.0 / (n - 1)
    budgets0 = np.array([own_budget, total_credits - own_budget])
    caps = np.array([cap, (n - 1) * cap])
    flow = aggregate_flow(n)
    per = np.empty((len(scenarios), T))
    for s, scen in enumerate(scenarios.scenarios):
        window = scen.gamma_agg[start:start + T]
        if window.shape[0] == T and not np.any(window):
            per[s] = 0.0
            continue
        agg = UtilityModel(
            gamma=scen.gamma_agg, app_probs=scen.app_probs_agg, params=own_model.params
        )
        try:
            plan: RatePlan = solve_coupled(
                [own_model, agg], budgets0, caps, flow, start, T,
                engine=engine, capacity=capacity,
            )
        except CreditBandError as err:
            err.scenario_id = scen.id
            raise
        per[s] = np.maximum(inv * plan.rates[1], 0.0)
    slots = (start + np.arange(T)) % scenarios.slots_per_day
    weights = scenarios.posteriors[slots]  # (T, n_scenarios)
    expected = np.einsum("ts,st->t", weights, per)
    return InflowForecast(
        start=start,
        expected=expected,
        per_scenario=per,
        scenario_ids=tuple(s.id for s in scenarios.scenarios),
    )


def likelihood(observed_inflow: float, per_scenario_inflows) -> np.ndarray:
    """Probability vector over scenarios from the L2 discrepancy rule.

    P_s = (1/(|S|-1)) * (1 - d_s^2 / sum_l d_l^2) with d_s the gap between
    the observation and scenario s's prediction; the components sum to 1 by
    construction. If every prediction matches the observation exactly the
    rule degenerates (0/0) and the mass is spread uniformly over the exact
    matches.
    """
    pred = np.asarray(per_scenario_inflows, dtype=float)
    S = pred.shape[0]
    if S < 2:
        raise ValueError("likelihood needs at least two scenarios")
    d2 = (pred - observed_inflow) ** 2
    denom = d2.sum()
    if denom == 0.0:
        return np.full(S, 1.0 / S)
    return (1.0 / (S - 1)) * (1.0 - d2 / denom)


def bayes_update(
    scenarios: ScenarioSet,
    observed_inflow: float,
    period: int,
    predictions,
) -> ScenarioSet:
    """Posterior update for the slot of `period` given predicted inflows.

    predictions is either the per-scenario inflow vector for that period or
    the InflowForecast that covers it (issued when the period was planned).
    The new posterior is likelihood * prior renormalized; if that product is
    identically zero the likelihood vector itself is used, as a restart.
    """
    if isinstance(predictions, InflowForecast):
        offset = period - predictions.start
        if not 0 <= offset < predictions.per_scenario.shape[1]:
            raise ValueError(f"period {period} outside forecast window")
        predictions = predictions.per_scenario[:, offset]
    if len(scenarios) == 1:
        return scenarios        # a lone hypothesis keeps its point mass
    like = likelihood(observed_inflow, predictions)
    slot = period % scenarios.slots_per_day
    prior = scenarios.posteriors[slot]
    post = like * prior
    z = post.sum()
    if z == 0.0:
        post = like
    else:
        post = post / z
    return scenarios.with_slot(slot, post)
