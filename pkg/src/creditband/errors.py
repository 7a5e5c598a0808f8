"""Exception types shared across the package."""


class CreditBandError(Exception):
    """Base class for all package errors."""


class DegenerateN(CreditBandError):
    def __init__(self, n, message=None):
        self.n = n
        super().__init__(message or f"gateway count n={n} is not supported here")


class InfeasibleCap(CreditBandError):
    def __init__(self, cap, lower, upper):
        self.cap = cap
        super().__init__(f"cap {cap} outside feasible range [{lower}, {upper}]")


class NegativeSpend(CreditBandError):
    def __init__(self, gateway, value):
        self.gateway = gateway
        self.value = value
        super().__init__(f"gateway {gateway} spend {value} is negative")


class SpendExceedsBudget(CreditBandError):
    def __init__(self, gateway, spend, budget):
        self.gateway = gateway
        self.spend = spend
        self.budget = budget
        super().__init__(f"gateway {gateway} spend {spend} exceeds budget {budget}")


class NegativeRate(CreditBandError):
    def __init__(self, x):
        self.x = x
        super().__init__(f"rate {x} is negative")


class PeriodOutOfRange(CreditBandError):
    def __init__(self, t, horizon):
        self.t = t
        self.horizon = horizon
        super().__init__(f"period {t} outside horizon [0, {horizon})")


class SingularAtZero(CreditBandError):
    def __init__(self, kind):
        self.kind = kind
        super().__init__(f"marginal of {kind} utility is unbounded at x=0")


class ZeroBandwidth(CreditBandError):
    def __init__(self, x_total):
        self.x_total = x_total
        super().__init__(f"cannot split nonpositive bandwidth {x_total}")


class Infeasible(CreditBandError):
    pass


class NoConvergence(CreditBandError):
    """Solver hit its iteration cap; carries the best iterate found."""

    def __init__(self, max_iters, best_x=None, best_objective=None):
        self.max_iters = max_iters
        self.best_x = best_x
        self.best_objective = best_objective
        super().__init__(f"no convergence after {max_iters} iterations")


class DegenerateObservation(CreditBandError):
    pass


class AllZeroPosterior(CreditBandError):
    pass


class NonpositiveDt(CreditBandError):
    def __init__(self, dt):
        self.dt = dt
        super().__init__(f"time step {dt} must be positive")


class NoConnections(CreditBandError):
    def __init__(self):
        super().__init__("at least one connection is required")


class ConfigError(CreditBandError):
    """Invalid or unparseable experiment configuration (CLI exit code 2)."""
