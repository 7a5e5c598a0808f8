"""Solvers for the concave spending programs.

Three programs share one constraint structure:

* the coupled welfare program over all gateways' spend matrices,
* the single-gateway sliding-window program against forecast inflows,
* the per-application split of one period's purchased bandwidth.

Spends x_it enter the constraints only through cumulative sums: spending
through period t may not exceed the starting budget plus credits received
strictly before t, and the expected budget after each period may not exceed
the cap. Both families are linear in x, so the feasible set is a polytope
and the strictly concave objective has a unique maximizer.

Engines: "slsqp" (dense rows, default for small problems), "al" (augmented
Lagrangian over matrix-free cumulative-sum constraint evaluations, default
for large ones), and "pgd" (projected gradient with Dykstra projections,
kept as an independent cross-check). All three agree on small instances;
tests pin them against exhaustive grid search.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.optimize import lsq_linear, minimize, nnls

from .errors import DegenerateN, Infeasible, NoConvergence, ZeroBandwidth
from .utility import (
    AppUtilityParams,
    UtilityModel,
    app_inverse_marginal,
    app_marginal,
    pack_grad,
    pack_models,
    pack_value,
)

FEAS_TOL = 1e-8          # constraint slack accepted as feasible
ACTIVE_TOL = 1e-6        # slack below which a constraint counts as active
SLSQP_MAX_DIM = 256      # beyond this the dense-row engine is not worth it


@dataclass(slots=True)
class HorizonProblem:
    """A T-period spending program starting at absolute period `start`.

    Coupled form: one model and one starting budget per gateway; credits
    received are 1/(n-1) of the others' (decision-variable) spends.

    Single-gateway form: exactly one model and budget, plus
    `inflow_forecast[t]` giving the expected credits received in each
    window period (already divided by n-1).
    """

    start: int
    T: int
    models: Sequence[UtilityModel]
    budgets0: np.ndarray
    cap: float
    inflow_forecast: np.ndarray | None = None
    # per-period aggregate spend limit (the shared link rate); scalar or (T,)
    capacity: float | np.ndarray | None = None

    def __post_init__(self):
        self.budgets0 = np.asarray(self.budgets0, dtype=float)
        if self.T < 1:
            raise ValueError(f"horizon T must be >= 1, got {self.T}")
        if self.start < 0:
            raise ValueError(f"start period must be >= 0, got {self.start}")
        if self.budgets0.ndim != 1 or len(self.models) != self.budgets0.shape[0]:
            raise ValueError("need one starting budget per model")
        if np.any(self.budgets0 < -1e-9):
            raise ValueError("starting budgets must be nonnegative")
        self.budgets0 = np.maximum(self.budgets0, 0.0)
        if self.cap <= 0:
            raise ValueError(f"cap must be positive, got {self.cap}")
        if self.capacity is not None and np.any(np.asarray(self.capacity) < 0):
            raise ValueError(f"capacity must be nonnegative, got {self.capacity}")
        if self.inflow_forecast is None:
            if len(self.models) < 2:
                raise DegenerateN(len(self.models), "coupled form needs n >= 2")
        else:
            self.inflow_forecast = np.asarray(self.inflow_forecast, dtype=float)
            if len(self.models) != 1:
                raise ValueError("forecast form takes exactly one model")
            if self.inflow_forecast.shape != (self.T,):
                raise ValueError("inflow_forecast must have one entry per window period")
            if np.any(self.inflow_forecast < 0):
                raise ValueError("inflow forecast must be nonnegative")

    @property
    def n(self) -> int:
        return len(self.models)


@dataclass(slots=True)
class RatePlan:
    """Solved spend matrix (gateways x periods) with solver diagnostics."""

    rates: np.ndarray
    objective: float
    start: int
    engine: str
    iterations: int
    max_violation: float


@dataclass(slots=True)
class KktCertificate:
    """Multipliers recovered at the solution.

    lam: budget-constraint multipliers per (gateway, period).
    lam_cap: cap-constraint multipliers per (gateway, period).
    nu: x >= 0 multipliers per (gateway, period).
    stationarity_residual: max-norm gradient defect of the Lagrangian,
    scaled by the largest marginal at the solution.
    """

    lam: np.ndarray
    lam_cap: np.ndarray
    nu: np.ndarray
    stationarity_residual: float
    complementarity_residual: float
    max_violation: float
    lam_capacity: np.ndarray | None = None  # per-period shared-link multipliers


@dataclass(slots=True)
class PrioritySplit:
    """Normalized per-application shares of one period's bandwidth."""

    mu: np.ndarray
    level: float  # common marginal utility across active applications


@dataclass(slots=True)
class NashReport:
    """Per-gateway unilateral-deviation gains against a fixed plan."""

    base_utilities: np.ndarray
    deviation_utilities: np.ndarray
    rel_gains: np.ndarray
    max_rel_gain: float
    tol: float
    passed: bool


def _revcumsum(a: np.ndarray) -> np.ndarray:
    return np.cumsum(a[:, ::-1], axis=1)[:, ::-1]


class _ConstraintSet:
    """Linear constraint rows c(x) <= 0 in coupled and forecast forms.

    Row family 1 (budget): cumulative spend through t minus credits received
    before t must not exceed the starting budget.
    Row family 2 (cap): the budget held after period t's redistribution must
    not exceed the cap.
    Row family 3 (capacity, optional): the players' total spend in each
    period must not exceed the shared link rate.

    Coupled form: received credits are flow @ spends, where flow[a, b] is the
    fraction of b's spend that lands in a's budget. The default flow is the
    symmetric even split (everyone else gets 1/(n-1)); an aggregated
    "everyone else" player uses an asymmetric flow with self-recycling.
    """

    __slots__ = ("b0", "caps", "n", "T", "flow", "ecum_prev", "ecum_incl", "capacity")

    def __init__(self, budgets0, caps, T, inflow=None, flow=None, capacity=None):
        self.b0 = np.asarray(budgets0, dtype=float)
        self.n = self.b0.shape[0]
        self.T = T
        if capacity is None:
            self.capacity = None
        else:
            self.capacity = np.broadcast_to(
                np.asarray(capacity, dtype=float), (T,)
            ).copy()
        self.caps = np.broadcast_to(np.asarray(caps, dtype=float), (self.n,)).copy()
        if inflow is None:
            if flow is None:
                if self.n < 2:
                    raise DegenerateN(self.n, "coupled constraints need n >= 2")
                flow = (np.ones((self.n, self.n)) - np.eye(self.n)) / (self.n - 1)
            self.flow = np.asarray(flow, dtype=float)
            if self.flow.shape != (self.n, self.n):
                raise ValueError("flow matrix must be n x n")
            self.ecum_prev = None
            self.ecum_incl = None
        else:
            self.flow = None
            incl = np.cumsum(np.asarray(inflow, dtype=float))
            self.ecum_incl = incl
            self.ecum_prev = incl - inflow
            # a single period's inflow beyond the cap cannot be spent in time
            if np.any(np.asarray(inflow) > self.caps[0] + 1e-9):
                raise Infeasible("forecast inflow exceeds the cap within one period")

    @property
    def coupled(self) -> bool:
        return self.flow is not None

    def values(self, x: np.ndarray):
        cum = np.cumsum(x, axis=1)
        if self.coupled:
            recv_incl = self.flow @ cum
            recv_prev = np.concatenate(
                [np.zeros((self.n, 1)), recv_incl[:, :-1]], axis=1
            )
        else:
            recv_prev = self.ecum_prev[None, :]
            recv_incl = self.ecum_incl[None, :]
        c1 = cum - recv_prev - self.b0[:, None]
        c2 = -cum + recv_incl - (self.caps - self.b0)[:, None]
        c3 = None if self.capacity is None else x.sum(axis=0) - self.capacity
        return c1, c2, c3

    def violation(self, x: np.ndarray) -> float:
        c1, c2, c3 = self.values(x)
        worst = max(0.0, c1.max(), c2.max(), (-x).max())
        if c3 is not None:
            worst = max(worst, c3.max())
        return float(worst)

    def adjoint(self, m1: np.ndarray, m2: np.ndarray, m3=None) -> np.ndarray:
        """Gradient of sum(m*c) over all families with respect to x."""
        s1 = _revcumsum(m1)
        s2 = _revcumsum(m2)
        g = s1 - s2
        if self.coupled:
            s1n = np.concatenate([s1[:, 1:], np.zeros((self.n, 1))], axis=1)
            g -= self.flow.T @ s1n
            g += self.flow.T @ s2
        if m3 is not None:
            g = g + m3[None, :]
        return g

    def dense(self):
        """Explicit (A, rhs) with A x <= rhs; family-1 rows first."""
        n, T = self.n, self.T
        rows, rhs = [], []
        for i in range(n):
            for t in range(T):
                a = np.zeros((n, T))
                a[i, : t + 1] += 1.0
                r = self.b0[i]
                if self.coupled:
                    a[:, :t] -= self.flow[i][:, None]
                else:
                    r += self.ecum_prev[t]
                rows.append(a.ravel())
                rhs.append(r)
        for i in range(n):
            for t in range(T):
                a = np.zeros((n, T))
                a[i, : t + 1] -= 1.0
                r = self.caps[i] - self.b0[i]
                if self.coupled:
                    a[:, : t + 1] += self.flow[i][:, None]
                else:
                    r -= self.ecum_incl[t]
                rows.append(a.ravel())
                rhs.append(r)
        if self.capacity is not None:
            for t in range(T):
                a = np.zeros((n, T))
                a[:, t] = 1.0
                rows.append(a.ravel())
                rhs.append(self.capacity[t])
        return np.array(rows), np.array(rhs)


def _constraints_for(problem: HorizonProblem) -> _ConstraintSet:
    return _ConstraintSet(
        problem.budgets0,
        problem.cap,
        problem.T,
        inflow=problem.inflow_forecast,
        capacity=problem.capacity,
    )


# -- engines ------------------------------------------------------------------


def _run_slsqp(pack, cons, x0):
    n, T = x0.shape
    A, rhs = cons.dense()

    def fg(z):
        x = z.reshape(n, T)
        return -pack_value(pack, x), -pack_grad(pack, x).ravel()

    res = minimize(
        fg,
        x0.ravel(),
        jac=True,
        method="SLSQP",
        bounds=[(0.0, None)] * (n * T),
        constraints=[{"type": "ineq", "fun": lambda z: rhs - A @ z, "jac": lambda z: -A}],
        options={"maxiter": 1000, "ftol": 1e-12},
    )
    x = np.clip(res.x.reshape(n, T), 0.0, None)
    return x, int(res.nit), int(res.status)


def _run_al(pack, cons, x0, outer_max=40):
    n, T = x0.shape
    lam1 = np.zeros((n, T))
    lam2 = np.zeros((n, T))
    lam3 = None if cons.capacity is None else np.zeros(T)
    rho = 10.0
    prev_viol = np.inf
    f_prev = None
    zflat = x0.ravel()
    iters = 0
    for _ in range(outer_max):

        def fg(z):
            x = z.reshape(n, T)
            f = pack_value(pack, x)
            g = pack_grad(pack, x)
            c1, c2, c3 = cons.values(x)
            m1 = np.maximum(0.0, lam1 + rho * c1)
            m2 = np.maximum(0.0, lam2 + rho * c2)
            pen = ((m1 * m1 - lam1 * lam1).sum() + (m2 * m2 - lam2 * lam2).sum()) / (2 * rho)
            m3 = None
            if c3 is not None:
                m3 = np.maximum(0.0, lam3 + rho * c3)
                pen += (m3 * m3 - lam3 * lam3).sum() / (2 * rho)
            gpen = cons.adjoint(m1, m2, m3)
            return -(f - pen), -(g - gpen).ravel()

        res = minimize(
            fg,
            zflat,
            jac=True,
            method="L-BFGS-B",
            bounds=[(0.0, None)] * (n * T),
            options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-10},
        )
        zflat = res.x
        iters += int(res.nit)
        x = zflat.reshape(n, T)
        c1, c2, c3 = cons.values(x)
        viol = float(max(0.0, c1.max(), c2.max()))
        lam1 = np.maximum(0.0, lam1 + rho * c1)
        lam2 = np.maximum(0.0, lam2 + rho * c2)
        if c3 is not None:
            viol = max(viol, float(c3.max()))
            lam3 = np.maximum(0.0, lam3 + rho * c3)
        f = pack_value(pack, x)
        if viol <= 1e-10 and f_prev is not None and abs(f - f_prev) <= 1e-9 * (1 + abs(f)):
            break
        if viol > prev_viol / 4 and viol > 1e-10:
            rho = min(rho * 4.0, 1e9)
        prev_viol = viol
        f_prev = f
    return np.clip(x, 0.0, None), iters


def _dykstra(z, A, rhs, norms2, max_cycles=500, tol=1e-12):
    """Project z onto {x >= 0, A x <= rhs} (alternating with corrections)."""
    x = z.copy()
    m = len(rhs)
    corr = np.zeros((m + 1, z.shape[0]))
    for _ in range(max_cycles):
        shift = 0.0
        for r in range(m):
            y = x + corr[r]
            v = A[r] @ y - rhs[r]
            xn = y - (v / norms2[r]) * A[r] if v > 0 else y
            corr[r] = y - xn
            shift = max(shift, float(np.abs(xn - x).max()))
            x = xn
        y = x + corr[m]
        xn = np.maximum(y, 0.0)
        corr[m] = y - xn
        shift = max(shift, float(np.abs(xn - x).max()))
        x = xn
        if shift < tol:
            break
    return x


def _run_pgd(pack, cons, x0, max_iter=100_000):
    n, T = x0.shape
    A, rhs = cons.dense()
    norms2 = (A * A).sum(axis=1)
    z = _dykstra(x0.ravel(), A, rhs, norms2)
    f = pack_value(pack, z.reshape(n, T))
    step = 1.0
    it = 0
    for it in range(1, max_iter + 1):
        g = pack_grad(pack, z.reshape(n, T)).ravel()
        accepted = False
        s = step
        while s >= 1e-14:
            cand = _dykstra(z + s * g, A, rhs, norms2)
            d = cand - z
            gd = float(g @ d)
            fc = pack_value(pack, cand.reshape(n, T))
            if fc >= f + 1e-4 * gd:
                accepted = True
                break
            s /= 2.0
        if not accepted:
            break
        converged = abs(fc - f) <= 1e-8 * (1 + abs(f))
        z, f = cand, fc
        step = min(s * 2.0, 4.0)
        if converged:
            break
    return np.clip(z.reshape(n, T), 0.0, None), it


def _improvable_coordinate(pack, cons, x, rel_tol=1e-6) -> bool:
    """First-order sniff test: a zero coordinate with a positive marginal
    and slack in every row it tightens means the point is not optimal."""
    g = pack_grad(pack, x)
    gmax = float(np.abs(g).max())
    if gmax <= 0:
        return False
    zero = (x.ravel() < 1e-9) & (g.ravel() > rel_tol * gmax)
    if not zero.any():
        return False
    A, rhs = cons.dense()
    slack = rhs - A @ x.ravel()
    for j in np.flatnonzero(zero):
        tight = A[:, j] > 0
        if not tight.any() or slack[tight].min() > 1e-7:
            return True
    return False


def _solve(pack, cons, engine: str):
    n, T = pack.shape
    # start from zero spending: periods the objective does not care about
    # (zero utility weight) then deterministically stay at zero spend
    x0 = np.zeros((n, T))
    chosen = engine
    if engine == "auto":
        chosen = "slsqp" if n * T <= SLSQP_MAX_DIM else "al"

    if chosen == "slsqp":
        x, iters, status = _run_slsqp(pack, cons, x0)
        # status 8 is a line-search stall that routinely happens at the
        # optimum under a tight ftol; judge those iterates by feasibility,
        # and fall back to the augmented Lagrangian engine otherwise; a
        # "success" whose point still has an obvious ascent direction is a
        # false convergence and goes through the same fallback
        if (
            cons.violation(x) > FEAS_TOL
            or status not in (0, 8)
            or _improvable_coordinate(pack, cons, x)
        ):
            x_al, it_al = _run_al(pack, cons, x0)
            ok_al = cons.violation(x_al) <= FEAS_TOL
            ok_sl = cons.violation(x) <= FEAS_TOL
            if ok_al and (not ok_sl or pack_value(pack, x_al) > pack_value(pack, x)):
                x, iters, chosen = x_al, iters + it_al, "slsqp+al"
    elif chosen == "al":
        x, iters = _run_al(pack, cons, x0)
    elif chosen == "pgd":
        x, iters = _run_pgd(pack, cons, x0)
    else:
        raise ValueError(f"unknown engine {engine!r}")

    viol = cons.violation(x)
    if viol > FEAS_TOL:
        raise NoConvergence(iters, best_x=x, best_objective=pack_value(pack, x))
    return x, chosen, iters, viol


def solve_global(problem: HorizonProblem, engine: str = "auto"):
    """Maximize total welfare over all gateways' spend plans.

    Returns the optimal RatePlan and a KktCertificate whose multipliers are
    recovered by nonnegative least squares on the active constraints.
    """
    pack = pack_models(problem.models, problem.start, problem.T)
    cons = _constraints_for(problem)
    x, eng, iters, viol = _solve(pack, cons, engine)
    plan = RatePlan(
        rates=x,
        objective=pack_value(pack, x),
        start=problem.start,
        engine=eng,
        iterations=iters,
        max_violation=viol,
    )
    cert = kkt_certificate(problem, plan)
    return plan, cert


def solve_coupled(
    models: Sequence[UtilityModel],
    budgets0,
    caps,
    flow,
    start: int,
    T: int,
    engine: str = "auto",
    capacity: float | None = None,
) -> RatePlan:
    """Welfare solve under an explicit credit-flow matrix and per-player caps.

    flow[a, b] is the fraction of player b's spend credited to player a each
    period. Used for the two-player form where one player aggregates all the
    other gateways (own spend fully funds the aggregate, which recycles
    (n-2)/(n-1) of its own spend internally). capacity, when given, limits
    the players' combined per-period spend to the shared link rate.
    """
    pack = pack_models(models, start, T)
    cons = _ConstraintSet(
        budgets0, caps, T, flow=np.asarray(flow, dtype=float), capacity=capacity
    )
    x, eng, iters, viol = _solve(pack, cons, engine)
    return RatePlan(
        rates=x,
        objective=pack_value(pack, x),
        start=start,
        engine=eng,
        iterations=iters,
        max_violation=viol,
    )


def solve_gateway(problem: HorizonProblem, engine: str = "auto") -> RatePlan:
    """Maximize one gateway's utility against forecast credit inflows."""
    if problem.inflow_forecast is None:
        raise ValueError("solve_gateway needs an inflow forecast")
    pack = pack_models(problem.models, problem.start, problem.T)
    cons = _constraints_for(problem)
    x, eng, iters, viol = _solve(pack, cons, engine)
    return RatePlan(
        rates=x,
        objective=pack_value(pack, x),
        start=problem.start,
        engine=eng,
        iterations=iters,
        max_violation=viol,
    )


def kkt_certificate(
    problem: HorizonProblem, plan: RatePlan, active_tol: float = ACTIVE_TOL
) -> KktCertificate:
    """Recover multipliers at the plan and measure the stationarity defect."""
    pack = pack_models(problem.models, problem.start, problem.T)
    cons = _constraints_for(problem)
    x = plan.rates
    n, T = x.shape
    g = pack_grad(pack, x).ravel()
    A, rhs = cons.dense()
    c = A @ x.ravel() - rhs
    act = np.flatnonzero(c > -active_tol)
    zeros = np.flatnonzero(x.ravel() < 1e-8)

    cols = []
    for r in act:
        cols.append(A[r])
    for j in zeros:
        e = np.zeros(n * T)
        e[j] = -1.0
        cols.append(e)

    lam = np.zeros((n, T))
    lam_cap = np.zeros((n, T))
    nu = np.zeros((n, T))
    flat_lam = np.zeros(len(rhs))
    scale = max(float(np.abs(g).max()), 1e-9)
    if cols:
        G = np.array(cols).T
        if G.shape[1] <= 400:
            sol, _ = nnls(G, g)
        else:
            sol = lsq_linear(G, g, bounds=(0.0, np.inf), tol=1e-12).x
        resid = float(np.abs(G @ sol - g).max()) / scale
        flat_lam[act] = sol[: len(act)]
        lam = flat_lam[: n * T].reshape(n, T)
        lam_cap = flat_lam[n * T : 2 * n * T].reshape(n, T)
        nu.ravel()[zeros] = sol[len(act) :]
    else:
        resid = float(np.abs(g).max()) / scale

    comp = 0.0
    if len(act):
        comp = float(np.abs(flat_lam[act] * c[act]).max()) / scale
    comp = max(comp, float(np.abs(nu.ravel() * x.ravel()).max()) / scale)
    return KktCertificate(
        lam=lam,
        lam_cap=lam_cap,
        nu=nu,
        stationarity_residual=resid,
        complementarity_residual=comp,
        max_violation=cons.violation(x),
        lam_capacity=flat_lam[2 * n * T :] if cons.capacity is not None else None,
    )


# -- application priority split ----------------------------------------------


def solve_priorities(params: Sequence[AppUtilityParams], x_total: float) -> PrioritySplit:
    """Split x_total across applications so active marginals equalize.

    Water filling on the common marginal level: each application's share is
    the rate at which its marginal equals the level; the level is bisected
    until the shares sum to x_total.
    """
    if x_total <= 0:
        raise ZeroBandwidth(x_total)
    params = tuple(params)
    if len(params) < 2:
        raise ValueError("need at least two applications to split between")

    def shares(level):
        return np.array([app_inverse_marginal(p, level) for p in params])

    # bracket: at the smallest marginal-at-x_total the matching app alone
    # already claims everything; growing the level shrinks every share
    lo = min(app_marginal(p, x_total) for p in params)
    hi = lo
    while shares(hi).sum() > x_total:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if shares(mid).sum() > x_total:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-15 * hi:
            break
    level = 0.5 * (lo + hi)
    raw = shares(level)
    mu = raw / raw.sum()
    return PrioritySplit(mu=mu, level=float(level))


# -- Nash property -------------------------------------------------------------


def gateway_problem_from_plan(
    problem: HorizonProblem, plan: RatePlan, i: int
) -> HorizonProblem:
    """Single-gateway problem with the other gateways' plan rates held fixed."""
    n = problem.n
    others = plan.rates.sum(axis=0) - plan.rates[i]
    residual = None
    if problem.capacity is not None:
        residual = np.maximum(np.asarray(problem.capacity) - others, 0.0)
    return HorizonProblem(
        start=problem.start,
        T=problem.T,
        models=[problem.models[i]],
        budgets0=problem.budgets0[i : i + 1],
        cap=problem.cap,
        inflow_forecast=others / (n - 1),
        capacity=residual,
    )


def _solve_rows(pack, A, rhs, x0):
    """Maximize a single-gateway pack objective under generic rows A y <= rhs."""
    T = x0.shape[0]

    def fg(z):
        x = z.reshape(1, T)
        return -pack_value(pack, x), -pack_grad(pack, x).ravel()

    res = minimize(
        fg,
        x0,
        jac=True,
        method="SLSQP",
        bounds=[(0.0, None)] * T,
        constraints=[{"type": "ineq", "fun": lambda z: rhs - A @ z, "jac": lambda z: -A}],
        options={"maxiter": 1000, "ftol": 1e-12},
    )
    y = np.clip(res.x, 0.0, None)

    def viol(z):
        return float(max(0.0, (A @ z - rhs).max(initial=0.0)))

    if viol(y) > FEAS_TOL or res.status not in (0, 8):
        # augmented Lagrangian fallback on the same rows
        lam = np.zeros(rhs.shape[0])
        rho = 10.0
        z = y
        prev = np.inf
        for _ in range(40):

            def fg_al(w):
                x = w.reshape(1, T)
                f = pack_value(pack, x)
                g = pack_grad(pack, x).ravel()
                c = A @ w - rhs
                m = np.maximum(0.0, lam + rho * c)
                pen = ((m * m - lam * lam).sum()) / (2 * rho)
                return -(f - pen), -(g - A.T @ m)

            out = minimize(
                fg_al, z, jac=True, method="L-BFGS-B",
                bounds=[(0.0, None)] * T,
                options={"maxiter": 2000, "ftol": 1e-15, "gtol": 1e-10},
            )
            z = out.x
            c = A @ z - rhs
            v = float(max(0.0, c.max(initial=0.0)))
            lam = np.maximum(0.0, lam + rho * c)
            if v <= 1e-10:
                break
            if v > prev / 4:
                rho = min(rho * 4.0, 1e9)
            prev = v
        z = np.clip(z, 0.0, None)
        if viol(z) > FEAS_TOL:
            raise NoConvergence(40, best_x=z, best_objective=pack_value(pack, z.reshape(1, T)))
        if pack_value(pack, z.reshape(1, T)) > pack_value(pack, y.reshape(1, T)) or viol(y) > FEAS_TOL:
            y = z
    return y


def verify_nash(
    plan: RatePlan,
    problems: Sequence[HorizonProblem],
    tol: float = 1e-4,
    capacity: float | None = None,
) -> NashReport:
    """Check that no gateway gains by re-solving with the others held fixed.

    problems[i] must be the single-gateway program for gateway i with the
    other gateways' plan rates as fixed inflows (gateway_problem_from_plan).
    capacity, when the plan was solved under a shared link limit, adds the
    same per-period aggregate rows to the deviation's feasible set.

    A deviation is admissible only if it keeps the shared redistribution
    constraints of every gateway satisfiable: spending plans are coupled
    (one gateway's spend funds the others' budgets), so a deviator that
    stops funding another gateway's committed spends would be forcing an
    infeasible system state, not playing a reachable strategy. The deviator
    therefore re-optimizes its own utility subject to all gateways' budget
    and cap rows with the others' rates held fixed. A violation is reported,
    never raised.
    """
    n = len(problems)
    if n < 2:
        raise DegenerateN(n, "a deviation check needs n >= 2")
    budgets0 = np.array([p.budgets0[0] for p in problems])
    first = problems[0]
    shared = _ConstraintSet(budgets0, first.cap, first.T, capacity=capacity)
    A, rhs = shared.dense()
    flat = plan.rates.ravel()
    base = np.empty(n)
    dev = np.empty(n)
    for i, sub in enumerate(problems):
        pack = pack_models(sub.models, sub.start, sub.T)
        base[i] = pack_value(pack, plan.rates[i : i + 1])
        own = slice(i * first.T, (i + 1) * first.T)
        others = flat.copy()
        others[own] = 0.0
        rhs_eff = rhs - A @ others
        y = _solve_rows(pack, A[:, own], rhs_eff, plan.rates[i].copy())
        dev[i] = pack_value(pack, y.reshape(1, -1))
    rel = (dev - base) / np.maximum(np.abs(base), 1e-9)
    max_rel = float(rel.max())
    return NashReport(
        base_utilities=base,
        deviation_utilities=dev,
        rel_gains=rel,
        max_rel_gain=max_rel,
        tol=tol,
        passed=bool(max_rel <= tol),
    )
