"""Four-application utility family and per-gateway composite utilities.

Two closed-form shapes cover the four application kinds:

  power   (streaming, social):   u(x) = scale * (25x)^(1-a) / (1-a)
  shifted (download, browsing):  u(x) = scale * (1/(a-1) + (25x+1)^(1-a) / (1-a))

Both are strictly increasing and strictly concave; the shifted form is 0 at
x=0 for any a, the power form is 0 at x=0 only for a < 1 and has an unbounded
marginal there. A gateway's composite utility at period t is
gamma_t * sum_k p_tk * u_k(x).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import NegativeRate, PeriodOutOfRange, SingularAtZero

# rate scaling baked into the closed forms (rates in Mbps)
RATE_SCALE = 25.0
# evaluation floor used by solvers where power-kind marginals blow up at 0
X_MIN = 1e-6

APP_KINDS = ("streaming", "social", "download", "browsing")
_POWER_KINDS = frozenset({"streaming", "social"})


@dataclass(frozen=True, slots=True)
class AppUtilityParams:
    kind: str
    alpha: float
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in APP_KINDS:
            raise ValueError(f"unknown app kind {self.kind!r}")
        if self.alpha <= 0 or self.alpha == 1.0:
            raise ValueError(f"alpha must be positive and != 1, got {self.alpha}")
        if self.scale <= 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    @property
    def is_power(self) -> bool:
        return self.kind in _POWER_KINDS


def default_app_params() -> tuple[AppUtilityParams, ...]:
    """The concrete parameterization used by the bundled experiment setup."""
    return (
        AppUtilityParams("streaming", alpha=0.7, scale=2.0),
        AppUtilityParams("social", alpha=0.5, scale=1.0),
        AppUtilityParams("download", alpha=0.2, scale=1.0),
        AppUtilityParams("browsing", alpha=3.0, scale=15.0),
    )


def eval_app_utility(params: AppUtilityParams, x):
    """Utility of rate x (Mbps) under a single application's closed form."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise NegativeRate(float(np.min(xa)))
    a, s = params.alpha, params.scale
    z = RATE_SCALE * xa
    if params.is_power:
        val = s * z ** (1.0 - a) / (1.0 - a)
    else:
        val = s * (1.0 / (a - 1.0) + (z + 1.0) ** (1.0 - a) / (1.0 - a))
    return float(val) if np.isscalar(x) else val


def app_marginal(params: AppUtilityParams, x):
    """du/dx for a single application. Power kinds are singular at x=0."""
    xa = np.asarray(x, dtype=float)
    if np.any(xa < 0):
        raise NegativeRate(float(np.min(xa)))
    a, s = params.alpha, params.scale
    if params.is_power:
        if np.any(xa == 0):
            raise SingularAtZero(params.kind)
        val = s * RATE_SCALE * (RATE_SCALE * xa) ** (-a)
    else:
        val = s * RATE_SCALE * (RATE_SCALE * xa + 1.0) ** (-a)
    return float(val) if np.isscalar(x) else val


def app_inverse_marginal(params: AppUtilityParams, g):
    """Rate x >= 0 with du/dx = g, clamped at 0 where g exceeds u'(0)."""
    if g <= 0:
        raise ValueError(f"marginal target must be positive, got {g}")
    a, s = params.alpha, params.scale
    base = (s * RATE_SCALE / g) ** (1.0 / a)
    if params.is_power:
        return base / RATE_SCALE
    return max(0.0, (base - 1.0) / RATE_SCALE)


@dataclass(slots=True)
class UtilityModel:
    """Composite per-period utility for one gateway over a horizon.

    gamma: (H,) nonnegative per-period scale.
    app_probs: (H, 4) per-period mixture over the four application kinds.
    params: the four AppUtilityParams, in APP_KINDS order.
    """

    gamma: np.ndarray
    app_probs: np.ndarray
    params: Sequence[AppUtilityParams]

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, dtype=float)
        self.app_probs = np.asarray(self.app_probs, dtype=float)
        if self.gamma.ndim != 1:
            raise ValueError("gamma must be one-dimensional")
        H = self.gamma.shape[0]
        if self.app_probs.shape != (H, len(APP_KINDS)):
            raise ValueError(f"app_probs must have shape ({H}, 4), got {self.app_probs.shape}")
        if np.any(self.gamma < 0):
            raise ValueError("gamma must be nonnegative")
        if np.any(self.app_probs < 0):
            raise ValueError("app probabilities must be nonnegative")
        sums = self.app_probs.sum(axis=1)
        if np.any(np.abs(sums - 1.0) > 1e-9):
            raise ValueError("app probabilities must sum to 1 per period")
        self.params = tuple(self.params)
        if len(self.params) != len(APP_KINDS):
            raise ValueError("need exactly four app parameter sets")

    @property
    def horizon(self) -> int:
        return self.gamma.shape[0]

    def _check_period(self, t: int):
        if not (0 <= t < self.horizon):
            raise PeriodOutOfRange(t, self.horizon)


def eval_composite(model: UtilityModel, t: int, x) -> float:
    model._check_period(t)
    g = model.gamma[t]
    if g == 0.0:
        if np.asarray(x, dtype=float) < 0:
            raise NegativeRate(float(x))
        return 0.0
    total = 0.0
    for k, params in enumerate(model.params):
        p = model.app_probs[t, k]
        if p > 0:
            total += p * eval_app_utility(params, x)
    return float(g * total)


def marginal(model: UtilityModel, t: int, x) -> float:
    model._check_period(t)
    g = model.gamma[t]
    if g == 0.0:
        return 0.0
    total = 0.0
    for k, params in enumerate(model.params):
        p = model.app_probs[t, k]
        if p > 0:
            total += p * app_marginal(params, x)
    return float(g * total)


# -- packed vector forms used by the solvers ---------------------------------
#
# A pack flattens one or more models over a period window into plain arrays so
# objective and gradient evaluations broadcast over (n, T) rate grids.


@dataclass(slots=True)
class UtilityPack:
    weights: np.ndarray  # (n, T, 4) gamma * p
    alphas: np.ndarray   # (n, 1, 4)
    scales: np.ndarray   # (n, 1, 4)
    power: np.ndarray    # (n, 1, 4) bool, power-form kinds

    @property
    def shape(self):
        return self.weights.shape[:2]


def pack_models(models: Sequence[UtilityModel], start: int, T: int) -> UtilityPack:
    """Flatten models over periods [start, start+T) for vectorized evaluation."""
    n = len(models)
    weights = np.empty((n, T, len(APP_KINDS)))
    alphas = np.empty((n, 1, len(APP_KINDS)))
    scales = np.empty((n, 1, len(APP_KINDS)))
    power = np.empty((n, 1, len(APP_KINDS)), dtype=bool)
    for i, m in enumerate(models):
        if start < 0 or start + T > m.horizon:
            raise PeriodOutOfRange(start + T - 1, m.horizon)
        weights[i] = m.gamma[start:start + T, None] * m.app_probs[start:start + T]
        alphas[i, 0] = [p.alpha for p in m.params]
        scales[i, 0] = [p.scale for p in m.params]
        power[i, 0] = [p.is_power for p in m.params]
    return UtilityPack(weights, alphas, scales, power)


def _cell_values_and_grads(pack: UtilityPack, x: np.ndarray):
    # Below X_MIN the closed forms are extended linearly (value and slope taken
    # at X_MIN). This keeps the objective strictly concave and C1 while capping
    # the power kinds' unbounded marginal near zero.
    xc = np.maximum(x, X_MIN)[..., None]
    z = RATE_SCALE * xc
    e = 1.0 - pack.alphas
    vals = np.where(
        pack.power,
        pack.scales * z**e / e,
        pack.scales * (1.0 / (pack.alphas - 1.0) + (z + 1.0) ** e / e),
    )
    grads = np.where(
        pack.power,
        pack.scales * RATE_SCALE * z**-pack.alphas,
        pack.scales * RATE_SCALE * (z + 1.0) ** -pack.alphas,
    )
    low = x[..., None] < X_MIN
    vals = np.where(low, vals + grads * (x[..., None] - xc), vals)
    return vals, grads


def pack_value(pack: UtilityPack, x: np.ndarray) -> float:
    """Total utility of an (n, T) rate matrix under the solver-side floor."""
    vals, _ = _cell_values_and_grads(pack, x)
    return float(np.sum(pack.weights * vals))


def pack_grad(pack: UtilityPack, x: np.ndarray) -> np.ndarray:
    """(n, T) gradient of pack_value."""
    _, grads = _cell_values_and_grads(pack, x)
    return np.sum(pack.weights * grads, axis=-1)


def pack_values_per_cell(pack: UtilityPack, x: np.ndarray) -> np.ndarray:
    """(n, T) per-cell utilities; used for traces and reports."""
    vals, _ = _cell_values_and_grads(pack, x)
    return np.sum(pack.weights * vals, axis=-1)


def validate_concave_increasing(params: AppUtilityParams, grid=None) -> bool:
    """Numeric sanity check that a parameterization is increasing and concave."""
    if grid is None:
        grid = np.linspace(1e-3, 32.0, 400)
    vals = eval_app_utility(params, grid)
    d1 = np.diff(vals)
    d2 = np.diff(d1)
    return bool(np.all(d1 > 0) and np.all(d2 < 1e-9))
