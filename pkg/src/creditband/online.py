"""Sliding-window online control loop and the equal-sharing baseline.

Each period every gateway, independently: updates its scenario posterior
from the previous period's observed credit inflow, forecasts inflows over
the next window, solves its own spending program, commits only the first
period's spend, and splits the committed rate across applications. The
ledger then redistributes all committed spends and applies the budget cap
as a single barrier.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import CreditBandError
from .forecast import ScenarioSet, bayes_update, predict_inflows
from .ledger import CreditLedger, apply_cap, redistribute
from .optimizer import HorizonProblem, solve_gateway, solve_priorities
from .utility import UtilityModel, eval_composite

COMMIT_EPS = 1e-12


@dataclass(slots=True)
class AllocationTrace:
    """Per-period, per-gateway record of one run.

    budgets[t, i] is gateway i's budget at the start of period t; spends,
    second_tier, mu and utilities describe what happened during t. The
    second tier is filled by the simulator; the control loop leaves it 0.
    """

    spends: np.ndarray       # (P, n) credits
    budgets: np.ndarray      # (P, n) credits at period start
    second_tier: np.ndarray  # (P, n) Mbps
    mu: np.ndarray           # (P, n, 4) priority split of the committed rate
    utilities: np.ndarray    # (P, n) realized first-tier utility
    mode: str = ""

    @classmethod
    def empty(cls, n: int, mode: str = "") -> "AllocationTrace":
        return cls(
            spends=np.zeros((0, n)),
            budgets=np.zeros((0, n)),
            second_tier=np.zeros((0, n)),
            mu=np.zeros((0, n, 4)),
            utilities=np.zeros((0, n)),
            mode=mode,
        )

    @property
    def periods(self) -> int:
        return self.spends.shape[0]

    @property
    def n(self) -> int:
        return self.spends.shape[1]

    def extended(self, spends, budgets, mu, utilities, second_tier=None):
        """New trace with one appended period (append-only growth)."""
        if second_tier is None:
            second_tier = np.zeros(self.n)
        return AllocationTrace(
            spends=np.vstack([self.spends, np.asarray(spends)[None, :]]),
            budgets=np.vstack([self.budgets, np.asarray(budgets)[None, :]]),
            second_tier=np.vstack([self.second_tier, np.asarray(second_tier)[None, :]]),
            mu=np.concatenate([self.mu, np.asarray(mu)[None, :, :]], axis=0),
            utilities=np.vstack([self.utilities, np.asarray(utilities)[None, :]]),
            mode=self.mode,
        )

    def total_utility(self) -> float:
        return float(self.utilities.sum())

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "spends": self.spends.tolist(),
            "budgets": self.budgets.tolist(),
            "second_tier": self.second_tier.tolist(),
            "mu": self.mu.tolist(),
            "utilities": self.utilities.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AllocationTrace":
        return cls(
            spends=np.asarray(d["spends"], dtype=float),
            budgets=np.asarray(d["budgets"], dtype=float),
            second_tier=np.asarray(d["second_tier"], dtype=float),
            mu=np.asarray(d["mu"], dtype=float),
            utilities=np.asarray(d["utilities"], dtype=float),
            mode=d.get("mode", ""),
        )


@dataclass(slots=True)
class OnlineState:
    """Whole-system state between periods of the online loop."""

    ledger: CreditLedger
    models: tuple
    scenario_sets: tuple
    window: int
    horizon: int
    engine: str = "auto"
    capacity: float | None = None  # shared link rate; None = unconstrained
    trace: AllocationTrace = None
    last_spends: np.ndarray | None = None
    last_forecasts: tuple | None = None
    last_reflow: np.ndarray | None = None

    def __post_init__(self):
        self.models = tuple(self.models)
        self.scenario_sets = tuple(self.scenario_sets)
        n = self.ledger.config.n
        if len(self.models) != n or len(self.scenario_sets) != n:
            raise ValueError("need one model and one scenario set per gateway")
        if self.window < 1:
            raise ValueError(f"window must be >= 1, got {self.window}")
        if self.trace is None:
            self.trace = AllocationTrace.empty(n, mode="online")

    @property
    def period(self) -> int:
        return self.ledger.period


def _observed_inflows(state: OnlineState, prev_spends: np.ndarray) -> np.ndarray:
    """Previous period's credits received per gateway.

    Every gateway sees the same aggregate signal, others' total spend over
    n-1, plus any cap-reflow credits it gained or lost at the barrier; the
    two are indistinguishable in the published budget feed.
    """
    n = state.ledger.config.n
    base = (prev_spends.sum() - prev_spends) / (n - 1)
    if state.last_reflow is not None:
        return base + state.last_reflow
    return base


def step(state: OnlineState, realized_other_spends=None) -> OnlineState:
    """Advance every gateway one period and commit through the ledger.

    realized_other_spends optionally overrides the previous period's spend
    vector used for the posterior update (defaults to the spends the loop
    itself committed last period).

    With a shared link rate set, committed spends are scaled proportionally
    whenever their total would exceed it: the link cannot deliver more, and
    gateways pay only for delivered bandwidth.
    """
    ledger = state.ledger
    n = ledger.config.n
    s = ledger.period
    total_credits = ledger.config.total_credits
    cap = ledger.config.cap
    window = min(state.window, state.horizon - s)
    if window < 1:
        raise ValueError(f"period {s} is past the {state.horizon}-period horizon")

    prev = state.last_spends if realized_other_spends is None else np.asarray(
        realized_other_spends, dtype=float
    )
    observed = None
    if prev is not None and state.last_forecasts is not None:
        observed = _observed_inflows(state, prev)

    spends = np.empty(n)
    mu = np.empty((n, 4))
    utilities = np.empty(n)
    new_sets = []
    forecasts = []
    for i in range(n):
        ss: ScenarioSet = state.scenario_sets[i]
        try:
            if observed is not None:
                ss = bayes_update(ss, float(observed[i]), s - 1,
                                  state.last_forecasts[i])
            fc = predict_inflows(
                state.models[i], float(ledger.budgets[i]), ss, s, window,
                n=n, total_credits=total_credits, cap=cap, engine=state.engine,
                capacity=state.capacity,
            )
            problem = HorizonProblem(
                start=s, T=window, models=[state.models[i]],
                budgets0=np.array([ledger.budgets[i]]), cap=cap,
                inflow_forecast=fc.expected, capacity=state.capacity,
            )
            plan = solve_gateway(problem, engine=state.engine)
        except CreditBandError as err:
            err.gateway = i
            err.period = s
            raise
        spends[i] = float(np.clip(plan.rates[0, 0], 0.0, ledger.budgets[i]))
        new_sets.append(ss)
        forecasts.append(fc)

    if state.capacity is not None and spends.sum() > state.capacity:
        spends *= state.capacity / spends.sum()
    for i in range(n):
        if spends[i] > COMMIT_EPS:
            mu[i] = solve_priorities(state.models[i].params, spends[i]).mu
            utilities[i] = eval_composite(state.models[i], s, spends[i])
        else:
            spends[i] = 0.0
            mu[i] = 0.25           # nothing to split; record the even split
            utilities[i] = 0.0     # true zero-rate utility, not the solver's
            #                        smoothed below-floor extension value

    trace = state.trace.extended(spends, ledger.budgets, mu, utilities)
    after_spend = redistribute(ledger, spends)
    capped = apply_cap(after_spend)
    reflow = capped.budgets - after_spend.budgets
    return replace(
        state,
        ledger=capped,
        scenario_sets=tuple(new_sets),
        trace=trace,
        last_spends=spends,
        last_forecasts=tuple(forecasts),
        last_reflow=reflow,
    )


def run_online(
    ledger: CreditLedger,
    models,
    scenario_sets,
    window: int,
    periods: int,
    engine: str = "auto",
    capacity: float | None = None,
) -> tuple[AllocationTrace, OnlineState]:
    """Run the control loop from the ledger's current period for `periods`."""
    state = OnlineState(
        ledger=ledger, models=models, scenario_sets=scenario_sets,
        window=window, horizon=ledger.period + periods, engine=engine,
        capacity=capacity,
    )
    for _ in range(periods):
        state = step(state)
    return state.trace, state


def equal_share(models, total_credits: float, rate: float, periods: int) -> AllocationTrace:
    """Baseline: every gateway gets the same fixed rate every period.

    Budgets stay at the equal split (each gateway's spend returns as inflow),
    and the priority split is solved once since it depends only on the rate.
    """
    if rate < 0:
        raise ValueError(f"rate must be nonnegative, got {rate}")
    models = tuple(models)
    n = len(models)
    if n < 1:
        raise ValueError("need at least one gateway")
    if rate > COMMIT_EPS:
        cache = {}
        for m in models:
            if m.params not in cache:
                cache[m.params] = solve_priorities(m.params, rate).mu
        mu_rows = np.array([cache[m.params] for m in models])
    else:
        mu_rows = np.full((n, 4), 0.25)
    P = periods
    if rate > COMMIT_EPS:
        utilities = np.array([
            [eval_composite(models[i], t, rate) for i in range(n)] for t in range(P)
        ])
    else:
        utilities = np.zeros((P, n))
    return AllocationTrace(
        spends=np.full((P, n), rate),
        budgets=np.full((P, n), total_credits / n),
        second_tier=np.zeros((P, n)),
        mu=np.tile(mu_rows[None, :, :], (P, 1, 1)),
        utilities=utilities,
        mode="equal_share",
    )
