"""Credit ledger: budget redistribution, cap enforcement, and closed-form bounds.

Budgets evolve by the redistribution rule

    b_{i,t+1} = b_it - x_it + sum_{j != i} x_jt / (n - 1)

so every spent credit is split equally among the other n-1 gateways and the
total credit supply B is conserved. A per-gateway cap is enforced separately
by reflowing above-cap excess to gateways strictly below the cap.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateN,
    InfeasibleCap,
    NegativeSpend,
    SpendExceedsBudget,
)

# feasibility slack on spend inputs; conservation drift is asserted at 1e-9 in audits
SPEND_SLACK = 1e-12
CAP_SLACK = 1e-12


@dataclass(slots=True)
class LedgerConfig:
    """Static ledger parameters.

    n is the gateway count, capacity_C the link capacity in Mbps, beta the
    over-provisioning factor, and cap the per-gateway budget ceiling in
    credits. Total credits B = beta * capacity_C; one credit buys 1 Mbps of
    guaranteed first-tier rate for one period.
    """

    n: int
    capacity_C: float
    beta: float
    cap: float

    def __post_init__(self):
        if self.n < 2:
            raise DegenerateN(self.n, f"need at least 2 gateways, got {self.n}")
        if self.capacity_C <= 0:
            raise ValueError(f"capacity must be positive, got {self.capacity_C}")
        if self.beta <= 0:
            raise ValueError(f"beta must be positive, got {self.beta}")
        B = self.total_credits
        if not (B / self.n - CAP_SLACK <= self.cap <= B + CAP_SLACK):
            raise InfeasibleCap(self.cap, B / self.n, B)

    @property
    def total_credits(self) -> float:
        return self.beta * self.capacity_C


@dataclass(slots=True)
class CreditLedger:
    config: LedgerConfig
    budgets: np.ndarray
    period: int = 0

    def __post_init__(self):
        self.budgets = np.asarray(self.budgets, dtype=float).copy()
        if self.budgets.shape != (self.config.n,):
            raise ValueError(
                f"budgets must have length {self.config.n}, got {self.budgets.shape}"
            )
        if np.any(self.budgets < -SPEND_SLACK):
            raise ValueError("budgets must be nonnegative")


def new_ledger(config: LedgerConfig, budgets=None, period: int = 0) -> CreditLedger:
    """Fresh ledger; defaults to the equal split B/n per gateway."""
    if budgets is None:
        budgets = np.full(config.n, config.total_credits / config.n)
    return CreditLedger(config=config, budgets=budgets, period=period)


def redistribute(ledger: CreditLedger, spends) -> CreditLedger:
    """One redistribution step. Cap is NOT applied here (see apply_cap).

    Parameters
    ----------
    ledger : CreditLedger
    spends : array-like of length n, credits spent by each gateway this period.

    Returns
    -------
    CreditLedger with period incremented and budgets
    b - x + (sum(x) - x) / (n - 1).
    """
    x = np.asarray(spends, dtype=float)
    if x.shape != ledger.budgets.shape:
        raise ValueError(f"expected {ledger.budgets.shape[0]} spends, got {x.shape}")
    for i in np.flatnonzero(x < 0):
        raise NegativeSpend(int(i), float(x[i]))
    over = x > ledger.budgets + SPEND_SLACK
    for i in np.flatnonzero(over):
        raise SpendExceedsBudget(int(i), float(x[i]), float(ledger.budgets[i]))
    n = ledger.config.n
    # spends inside the 1e-12 slack band count as exact full spends, keeping
    # budgets nonnegative without a conservation-breaking clip afterwards
    x = np.minimum(x, ledger.budgets)
    inflow = (x.sum() - x) / (n - 1)
    budgets = ledger.budgets - x + inflow
    return CreditLedger(ledger.config, budgets, ledger.period + 1)


def apply_cap(ledger: CreditLedger) -> CreditLedger:
    """Reflow above-cap excess in equal shares to gateways strictly below cap.

    Repeats until all budgets are at or below the cap; terminates in at most
    n-1 iterations. If every gateway sits at or above the cap (possible only
    when cap == B/n), all budgets are set to B/n.
    """
    cap = ledger.config.cap
    budgets = ledger.budgets.copy()
    n = ledger.config.n
    for _ in range(n):
        over = budgets > cap + CAP_SLACK
        if not over.any():
            break
        below = budgets < cap - CAP_SLACK
        if not below.any():
            budgets[:] = ledger.config.total_credits / n
            break
        excess = float(np.sum(budgets[over] - cap))
        budgets[over] = cap
        budgets[below] += excess / int(below.sum())
    return CreditLedger(ledger.config, budgets, ledger.period)


def spending_gap_bound(n: int, B: float) -> float:
    """Largest possible gap between two gateways' cumulative spends."""
    return B * (n - 1) / n


def hoarding_bound(n: int, B: float, epsilon: float, p: int, t: int) -> float:
    """Upper bound on a hoarding gateway's budget at period t.

    The gateway starts from the equal split, spends at least epsilon every p
    periods, and everyone else spends as much as possible. With
    alpha = (n-2)/(n-1) the bound is

        (B/n) alpha^(t+1) + B (1 - alpha^(t+1))
          - epsilon (alpha^p - alpha^(p (1 + floor((t+1)/p)))) / (1 - alpha^p)

    which tends to B - epsilon (n-2) as t grows with p = 1.
    """
    if n < 3:
        raise DegenerateN(n, "hoarding bound needs n >= 3")
    if not (0 <= epsilon < B / n):
        raise ValueError(f"epsilon must lie in [0, B/n), got {epsilon}")
    if p < 1:
        raise ValueError(f"p must be >= 1, got {p}")
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    alpha = (n - 2) / (n - 1)
    a_t1 = alpha ** (t + 1)
    blocks = (t + 1) // p
    spend_term = epsilon * (alpha**p - alpha ** (p * (1 + blocks))) / (1 - alpha**p)
    return (B / n) * a_t1 + B * (1 - a_t1) - spend_term


def inactive_accumulation_bound(n: int, B: float, m: int, s: int, initial_budgets) -> float:
    """Upper bound on the total credits m inactive gateways gain over s periods.

    initial_budgets holds the m inactive gateways' starting budgets. Each of
    the m idle gateways receives 1/(n-1) of whatever the actives spend, so
    their combined holdings M contract toward B by the worst-case recursion
    M' = M + m (B - M)/(n-1). That gives the bound

        (1 - ((n-1-m)/(n-1))^s) (B - sum(initial_budgets))

    which vanishes at s=0, tends to B - sum(initial) as s grows, and is tight
    when every active gateway dumps its entire budget each period.
    """
    init = np.atleast_1d(np.asarray(initial_budgets, dtype=float))
    if not (1 <= m < n):
        raise ValueError(f"need 1 <= m < n, got m={m}, n={n}")
    if init.shape != (m,):
        raise ValueError(f"expected {m} initial budgets, got {init.shape}")
    if s < 0:
        raise ValueError(f"s must be >= 0, got {s}")
    alpha = (n - 1 - m) / (n - 1)
    return (1.0 - alpha**s) * (B - float(init.sum()))


def to_json(ledger: CreditLedger) -> str:
    return json.dumps(to_dict(ledger))


def to_dict(ledger: CreditLedger) -> dict:
    return {
        "n": ledger.config.n,
        "B": ledger.config.total_credits,
        "cap": ledger.config.cap,
        "budgets": [float(b) for b in ledger.budgets],
        "period": ledger.period,
    }


def from_dict(d: dict) -> CreditLedger:
    # capacity/beta split is not part of the wire format; B and cap carry
    # everything the ledger rules need
    config = LedgerConfig(n=int(d["n"]), capacity_C=float(d["B"]), beta=1.0, cap=float(d["cap"]))
    return CreditLedger(config=config, budgets=np.asarray(d["budgets"], dtype=float), period=int(d["period"]))


def from_json(s: str) -> CreditLedger:
    return from_dict(json.loads(s))
