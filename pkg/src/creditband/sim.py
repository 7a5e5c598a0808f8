"""One-week desk-scale experiment: 16 gateways sharing a capped link.

Wires the ledger, solvers, forecasting and control loop into three runnable
modes (global welfare optimum, online sliding-window control, equal-share
baseline), draws free-tier background traffic, and reduces traces to
fairness and utility metrics.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .forecast import Scenario, ScenarioSet
from .ledger import (
    CreditLedger,
    LedgerConfig,
    apply_cap,
    new_ledger,
    redistribute,
    spending_gap_bound,
)
from .online import COMMIT_EPS, AllocationTrace, equal_share, run_online
from .optimizer import HorizonProblem, solve_global, solve_priorities
from .profiles import DEFAULT_SLOTS_PER_DAY, build_gateway_models, gamma_base
from .utility import APP_KINDS, eval_composite

MODES = ("global_optimal", "online", "equal_share", "ratelimit")
SCHEMA_VERSION = 1

# representative gateways for budget trajectories and per-gateway CDFs,
# reported 1-indexed
REPRESENTATIVE = (1, 6, 11, 16)

AUDIT_TOL = 1e-9
GAP_TOL = 1e-6


@dataclass(slots=True)
class ExperimentConfig:
    """Validated experiment description; JSON-round-trippable."""

    mode: str = "global_optimal"
    seed: int = 0
    n: int = 16
    capacity_C: float = 32.0
    beta: float = 5.0
    cap: float = 32.0
    slots_per_day: int = DEFAULT_SLOTS_PER_DAY
    days: int = 7
    window: int = 12
    learn_days: int = 4
    gamma_noise_sigma: float = 0.25
    second_tier_low: float = 0.0
    second_tier_high: float = 0.5
    equal_rate: float = 1.25
    engine: str = "auto"
    device_mix: list | None = None
    scenarios: list | None = None
    ratelimit: dict | None = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.n < 2:
            raise ConfigError(f"need at least 2 gateways, got n={self.n}")
        if self.days < 1:
            raise ConfigError(f"days must be >= 1, got {self.days}")
        if self.slots_per_day < 1:
            raise ConfigError(f"slots_per_day must be >= 1, got {self.slots_per_day}")
        if self.window < 1:
            raise ConfigError(f"window must be >= 1, got {self.window}")
        if not 0 <= self.learn_days <= self.days:
            raise ConfigError(
                f"learn_days must lie in [0, days], got {self.learn_days}"
            )
        if self.second_tier_low < 0 or self.second_tier_high < self.second_tier_low:
            raise ConfigError("second-tier law needs 0 <= low <= high")
        if self.equal_rate < 0:
            raise ConfigError(f"equal_rate must be nonnegative, got {self.equal_rate}")
        if self.gamma_noise_sigma < 0:
            raise ConfigError("gamma_noise_sigma must be nonnegative")

    @property
    def periods(self) -> int:
        return self.days * self.slots_per_day

    @property
    def total_credits(self) -> float:
        return self.beta * self.capacity_C

    def ledger_config(self) -> LedgerConfig:
        return LedgerConfig(
            n=self.n, capacity_C=self.capacity_C, beta=self.beta, cap=self.cap
        )

    def to_dict(self) -> dict:
        d = {"schema_version": SCHEMA_VERSION}
        for f in dataclasses.fields(self):
            d[f.name] = getattr(self, f.name)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a JSON object")
        d = dict(d)
        version = d.pop("schema_version", None)
        if version != SCHEMA_VERSION:
            raise ConfigError(
                f"schema_version must be {SCHEMA_VERSION}, got {version!r}"
            )
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(unknown)}")
        try:
            return cls(**d)
        except TypeError as err:
            raise ConfigError(str(err)) from err


@dataclass(slots=True)
class MetricsReport:
    """Per-period fairness and utility metrics of one run."""

    mode: str
    seed: int
    jain_inst: np.ndarray         # (P,) on first+second tier rates
    jain_cum: np.ndarray          # (P,) on cumulative rates
    utility_per_period: np.ndarray  # (P,)
    total_utility: float
    budgets: np.ndarray           # (P, n) full trajectories for the CSV
    representative: tuple = REPRESENTATIVE

    @property
    def budget_trajectories(self) -> np.ndarray:
        idx = [g - 1 for g in self.representative]
        return self.budgets[:, idx]


@dataclass(slots=True)
class RatioCdf:
    """CDF of per-cell utility ratios between two traces."""

    ratios: np.ndarray            # sorted, excluded cells removed
    fraction_below_one: float
    max_ratio: float
    excluded: int                 # cells where the reference utility was 0
    per_gateway: dict             # 1-indexed gateway -> sorted ratios


def jain_index(rates) -> float:
    """Fairness of a nonnegative allocation: (sum r)^2 / (n sum r^2).

    1 means perfectly equal shares, 1/n means one member takes everything.
    The all-zero allocation is defined as perfectly equal (index 1).
    """
    r = np.asarray(rates, dtype=float)
    if np.any(r < 0):
        raise ValueError("rates must be nonnegative")
    denom = float((r * r).sum())
    if denom == 0.0:
        return 1.0
    return float(r.sum() ** 2 / (r.shape[0] * denom))


def default_scenarios(config: ExperimentConfig) -> list[dict]:
    """Four hypotheses: everyone else uses only one application kind."""
    return [
        {"id": f"all_{kind}", "gamma_profile": "base", "app_mix": kind,
         "prior": 1.0 / len(APP_KINDS)}
        for kind in APP_KINDS
    ]


def _scenario_from_spec(spec: dict, config: ExperimentConfig) -> Scenario:
    known = {"id", "gamma_profile", "app_mix", "prior"}
    unknown = sorted(set(spec) - known)
    if unknown:
        raise ConfigError(f"unknown scenario fields: {', '.join(unknown)}")
    try:
        sid = spec["id"]
        profile = spec["gamma_profile"]
        mix = spec["app_mix"]
        prior = float(spec["prior"])
    except KeyError as err:
        raise ConfigError(f"scenario missing field {err.args[0]!r}") from err
    S = config.slots_per_day
    if profile == "base":
        day = gamma_base(S)
    else:
        day = np.asarray(profile, dtype=float)
        if day.shape != (S,):
            raise ConfigError(
                f"scenario {sid!r}: gamma_profile needs {S} slot values"
            )
    gamma = np.tile(day, config.days)
    if isinstance(mix, str):
        if mix not in APP_KINDS:
            raise ConfigError(f"scenario {sid!r}: unknown app kind {mix!r}")
        row = np.zeros(len(APP_KINDS))
        row[APP_KINDS.index(mix)] = 1.0
    else:
        row = np.asarray(mix, dtype=float)
        if row.shape != (len(APP_KINDS),) or abs(row.sum() - 1.0) > 1e-9:
            raise ConfigError(f"scenario {sid!r}: app_mix must be 4 shares summing to 1")
    probs = np.tile(row, (gamma.shape[0], 1))
    return Scenario(id=str(sid), gamma_agg=gamma, app_probs_agg=probs, prob=prior)


def build_scenario_set(config: ExperimentConfig) -> ScenarioSet:
    specs = config.scenarios if config.scenarios is not None else default_scenarios(config)
    scens = [_scenario_from_spec(s, config) for s in specs]
    return ScenarioSet(scens, slots_per_day=config.slots_per_day)


def build_models(config: ExperimentConfig, rng: np.random.Generator):
    return build_gateway_models(
        config.n, config.days, rng,
        slots_per_day=config.slots_per_day,
        device_mix=config.device_mix,
        noise_sigma=config.gamma_noise_sigma,
    )


def _split_rate(params, x: float) -> np.ndarray:
    if x > COMMIT_EPS:
        return solve_priorities(params, x).mu
    return np.full(4, 0.25)


def _trace_from_plan(plan_rates: np.ndarray, models, config: ExperimentConfig) -> AllocationTrace:
    """Replay a planned spend schedule through the real ledger dynamics.

    Spends are clipped to the running budgets and scaled down if a period's
    total would exceed the link rate; for a feasible plan both are no-ops.
    """
    P = config.periods
    n = config.n
    ledger = new_ledger(config.ledger_config())
    spends = np.empty((P, n))
    budgets = np.empty((P, n))
    mu = np.empty((P, n, 4))
    utilities = np.empty((P, n))
    for t in range(P):
        budgets[t] = ledger.budgets
        x = np.clip(plan_rates[:, t], 0.0, ledger.budgets)
        if x.sum() > config.capacity_C:
            x *= config.capacity_C / x.sum()
        x[x <= COMMIT_EPS] = 0.0
        spends[t] = x
        for i in range(n):
            mu[t, i] = _split_rate(models[i].params, x[i])
            utilities[t, i] = eval_composite(models[i], t, x[i]) if x[i] > 0 else 0.0
        ledger = apply_cap(redistribute(ledger, x))
    return AllocationTrace(
        spends=spends, budgets=budgets, second_tier=np.zeros((P, n)),
        mu=mu, utilities=utilities, mode="global_optimal",
    )


def _attach_second_tier(trace: AllocationTrace, draws: np.ndarray,
                        capacity: float) -> AllocationTrace:
    """Free-tier traffic fills spare capacity, split evenly across gateways.

    One rate draw applies to every gateway in a period, truncated to the
    equal share of whatever the first tier left unused.
    """
    n = trace.spends.shape[1]
    first_total = trace.spends.sum(axis=1)
    leftover = np.maximum(0.0, capacity - first_total)
    per_gateway = np.minimum(draws, leftover / n)
    return dataclasses.replace(
        trace, second_tier=np.repeat(per_gateway[:, None], n, axis=1)
    )


def metrics_from_trace(trace: AllocationTrace, config: ExperimentConfig) -> MetricsReport:
    rates = trace.spends + trace.second_tier
    P = trace.periods
    jain_inst = np.array([jain_index(rates[t]) for t in range(P)])
    cum = np.cumsum(rates, axis=0)
    jain_cum = np.array([jain_index(cum[t]) for t in range(P)])
    return MetricsReport(
        mode=trace.mode,
        seed=config.seed,
        jain_inst=jain_inst,
        jain_cum=jain_cum,
        utility_per_period=trace.utilities.sum(axis=1),
        total_utility=trace.total_utility(),
        budgets=trace.budgets.copy(),
        representative=tuple(g for g in REPRESENTATIVE if g <= config.n),
    )


def run_experiment(config: ExperimentConfig) -> tuple[AllocationTrace, MetricsReport]:
    """Execute the configured mode end to end, deterministically in the seed."""
    if config.mode == "ratelimit":
        raise ConfigError("ratelimit mode is not an allocation experiment")
    rng = np.random.default_rng(config.seed)
    models = build_models(config, rng)
    P = config.periods
    draws = rng.uniform(config.second_tier_low, config.second_tier_high, size=P)
    B = config.total_credits
    if config.mode == "equal_share":
        trace = equal_share(models, B, config.equal_rate, P)
    elif config.mode == "global_optimal":
        problem = HorizonProblem(
            start=0, T=P, models=models,
            budgets0=np.full(config.n, B / config.n), cap=config.cap,
            capacity=config.capacity_C,
        )
        plan, _ = solve_global(problem, engine=config.engine)
        trace = _trace_from_plan(plan.rates, models, config)
    else:
        scenario_set = build_scenario_set(config)
        ledger = new_ledger(config.ledger_config())
        trace, _ = run_online(
            ledger, models, [scenario_set] * config.n,
            window=config.window, periods=P, engine=config.engine,
            capacity=config.capacity_C,
        )
    trace = _attach_second_tier(trace, draws, config.capacity_C)
    return trace, metrics_from_trace(trace, config)


def utility_ratio_cdf(credit_trace: AllocationTrace, equal_trace: AllocationTrace,
                      representative=REPRESENTATIVE) -> RatioCdf:
    """Per-cell utility ratios (credit over equal share), sorted into a CDF.

    Cells where the reference utility is zero cannot be scored; they are
    dropped and counted.
    """
    if credit_trace.utilities.shape != equal_trace.utilities.shape:
        raise ValueError("traces must cover the same gateways and periods")
    u_credit = credit_trace.utilities
    u_equal = equal_trace.utilities
    ok = u_equal > 0
    excluded = int(np.size(u_equal) - ok.sum())
    ratios = u_credit[ok] / u_equal[ok]
    ratios_sorted = np.sort(ratios)
    per_gateway = {}
    representative = tuple(g for g in representative if g <= u_equal.shape[1])
    for g in representative:
        col = ok[:, g - 1]
        per_gateway[g] = np.sort(u_credit[col, g - 1] / u_equal[col, g - 1])
    return RatioCdf(
        ratios=ratios_sorted,
        fraction_below_one=float((ratios_sorted < 1.0).mean()) if ratios_sorted.size else 0.0,
        max_ratio=float(ratios_sorted[-1]) if ratios_sorted.size else 0.0,
        excluded=excluded,
        per_gateway=per_gateway,
    )


def audit_trace(trace: AllocationTrace, config: ExperimentConfig) -> list[str]:
    """Replay a trace against the ledger invariants; returns violations.

    Checks, per period: spends within budgets, budget transitions equal to
    redistribute+apply_cap replay, conservation of total credits, cap
    respected, second tier within spare capacity. Over the whole trace:
    the pairwise cumulative-spend gap bound.
    """
    out = []
    n = config.n
    B = config.total_credits
    cfg = config.ledger_config()
    P = trace.periods
    if trace.n != n:
        return [f"trace has {trace.n} gateways, config says {n}"]
    for t in range(P):
        b = trace.budgets[t]
        x = trace.spends[t]
        if np.any(x < -AUDIT_TOL):
            for i in np.flatnonzero(x < -AUDIT_TOL):
                out.append(f"period {t} gateway {i + 1}: negative spend {x[i]}")
            continue
        over = x > b + 1e-7
        for i in np.flatnonzero(over):
            out.append(
                f"period {t} gateway {i + 1}: spend {x[i]:.9g} exceeds budget {b[i]:.9g}"
            )
        if over.any():
            continue
        if abs(b.sum() - B) > max(AUDIT_TOL, 1e-12 * B) * 10:
            out.append(f"period {t}: conservation broken, budgets sum to {b.sum():.12g}")
        if np.any(b > config.cap + 1e-7):
            for i in np.flatnonzero(b > config.cap + 1e-7):
                out.append(f"period {t} gateway {i + 1}: budget {b[i]:.9g} above cap")
        second = trace.second_tier[t]
        if np.any(second < -AUDIT_TOL):
            out.append(f"period {t}: negative second-tier rate")
        if x.sum() > config.capacity_C + 1e-7:
            out.append(
                f"period {t}: first-tier total {x.sum():.9g} exceeds the "
                f"{config.capacity_C:.9g} link rate"
            )
        leftover = max(0.0, config.capacity_C - float(x.sum()))
        if second.sum() > leftover + 1e-7:
            out.append(
                f"period {t}: second tier {second.sum():.9g} exceeds spare "
                f"capacity {leftover:.9g}"
            )
        ledger = CreditLedger(cfg, b, period=t)
        replay = apply_cap(redistribute(ledger, np.minimum(x, b)))
        nxt = trace.budgets[t + 1] if t + 1 < P else replay.budgets
        drift = np.abs(replay.budgets - nxt)
        if drift.max() > 1e-7:
            i = int(drift.argmax())
            out.append(
                f"period {t} gateway {i + 1}: budget transition off by {drift.max():.3g}"
            )
    cum = np.cumsum(trace.spends, axis=0)
    bound = spending_gap_bound(n, B)
    for t in range(P):
        g = float(cum[t].max() - cum[t].min())
        if g > bound + GAP_TOL:
            out.append(f"period {t}: cumulative spending gap {g:.9g} exceeds {bound:.9g}")
    return out
