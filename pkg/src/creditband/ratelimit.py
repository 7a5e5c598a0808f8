"""Receiver-side rate limiting, modeled at two levels.

Level one is a fluid model of the receive buffer: the proxy drains the
buffer at a chosen rate D, the sender fills it at F, and TCP flow control
ties F to the advertised window W = buf_B - Q.  Draining at the target rate
R steers the system to the equilibrium F* = R, W* = R * rtt.

Level two is the multi-connection read scheduler: socket reads of busy
connections are truncated to alpha_i * b bytes and serialized through a
virtual time slot of length (bytes read) / R, so achieved rates split the
aggregate limit R in proportion to the priorities alpha_i without anyone
knowing how many connections are busy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .errors import NoConnections, NonpositiveDt

MB_PER_BYTE = 8e-6

DEFAULT_BLOCK_B = 4096          # one page
DEFAULT_DT = 1e-3               # forward Euler; stable when dt << rtt


@dataclass(slots=True)
class FluidFlowState:
    """Receive-buffer fluid model at one instant.

    Rates are in Mbps, buffer quantities in Mb, times in seconds.  The
    advertised window is not stored: W = buf_B - Q always.
    """

    F: float        # fill (sending) rate, set by the sender through W
    D: float        # drain rate, the control the proxy actually has
    Q: float        # queue length
    buf_B: float    # receive buffer size
    rtt: float      # round-trip time
    R: float        # target rate limit

    def __post_init__(self):
        if self.buf_B <= 0:
            raise ValueError(f"buffer size must be positive, got {self.buf_B}")
        if self.rtt <= 0:
            raise ValueError(f"rtt must be positive, got {self.rtt}")
        if self.R <= 0:
            raise ValueError(f"rate limit must be positive, got {self.R}")
        if not 0 <= self.Q <= self.buf_B:
            raise ValueError(f"queue length {self.Q} outside [0, {self.buf_B}]")
        if self.F < 0 or self.D < 0:
            raise ValueError("rates must be nonnegative")

    @property
    def W(self) -> float:
        return self.buf_B - self.Q


def fluid_step(state: FluidFlowState, dt: float,
               demand: float = math.inf) -> FluidFlowState:
    """Advance the buffer model by dt seconds of forward Euler.

    The window moves by (D - F) * dt, projected so the queue stays inside
    [0, buf_B]; the sender then refills it at F = min(demand, W / rtt).
    A greedy sender (the default) always has data to push.
    """
    if dt <= 0:
        raise NonpositiveDt(dt)
    if demand < 0:
        raise ValueError(f"sender demand must be nonnegative, got {demand}")
    w = state.W + (state.D - state.F) * dt
    w = min(max(w, 0.0), state.buf_B)
    return replace(state, Q=state.buf_B - w, F=min(demand, w / state.rtt))


@dataclass(slots=True)
class FluidTrace:
    """Time series of one fluid-model run."""

    times: np.ndarray
    fill: np.ndarray      # F
    window: np.ndarray    # W
    queue: np.ndarray     # Q
    R: float
    rtt: float

    @property
    def terminal_rate_error(self) -> float:
        return abs(float(self.fill[-1]) - self.R) / self.R


def run_fluid(R: float, rtt: float, buf_B: float = 2.0, duration: float = 2.0,
              dt: float = DEFAULT_DT, demand=None) -> FluidTrace:
    """Drain at D = R from a full window and record the trajectory.

    demand is None for a greedy sender, or a callable t -> Mbps for on/off
    bursty senders.
    """
    if dt <= 0:
        raise NonpositiveDt(dt)
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    want = (lambda t: math.inf) if demand is None else demand
    state = FluidFlowState(F=min(want(0.0), buf_B / rtt), D=R, Q=0.0,
                           buf_B=buf_B, rtt=rtt, R=R)
    steps = int(round(duration / dt))
    times = np.arange(steps + 1) * dt
    fill = np.empty(steps + 1)
    window = np.empty(steps + 1)
    queue = np.empty(steps + 1)
    fill[0], window[0], queue[0] = state.F, state.W, state.Q
    for k in range(steps):
        state = fluid_step(state, dt, want(times[k]))
        fill[k + 1], window[k + 1], queue[k + 1] = state.F, state.W, state.Q
    return FluidTrace(times=times, fill=fill, window=window, queue=queue,
                      R=R, rtt=rtt)


@dataclass(slots=True)
class ConnectionSpec:
    """One proxied connection as the read scheduler sees it.

    backlog is True for a persistently busy connection, False for an idle
    one, or a byte count for a finite burst.  start_s admits the connection
    partway into a run.
    """

    alpha: float
    backlog: object = True
    block_b: int = DEFAULT_BLOCK_B
    start_s: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"priority must lie in (0, 1], got {self.alpha}")
        if self.block_b <= 0:
            raise ValueError(f"block size must be positive, got {self.block_b}")
        if not isinstance(self.backlog, bool) and self.backlog < 0:
            raise ValueError(f"backlog bytes must be nonnegative, got {self.backlog}")
        if self.start_s < 0:
            raise ValueError(f"start time must be nonnegative, got {self.start_s}")

    @property
    def pending0(self) -> float:
        if isinstance(self.backlog, bool):
            return math.inf if self.backlog else 0.0
        return float(self.backlog)


@dataclass(slots=True)
class ScheduleResult:
    """Per-connection outcome of one scheduler run.

    rates averages each connection's delivered megabits over the whole
    duration; rates_between measures a sub-window, attributing each read to
    the instant its time slot ends.
    """

    rates: np.ndarray
    read_times: np.ndarray
    read_conns: np.ndarray
    read_mb: np.ndarray
    duration: float

    def rates_between(self, t0: float, t1: float) -> np.ndarray:
        if not t0 < t1:
            raise ValueError(f"need t0 < t1, got [{t0}, {t1}]")
        inside = (self.read_times > t0) & (self.read_times <= t1)
        mb = np.bincount(self.read_conns[inside],
                         weights=self.read_mb[inside],
                         minlength=self.rates.shape[0])
        return mb / (t1 - t0)


def schedule_reads(connections: list[ConnectionSpec], R: float,
                   duration: float) -> ScheduleResult:
    """Serialize truncated reads through the virtual time resource.

    Round-robin over connections with pending bytes; a busy connection
    (pending >= block) reads alpha * block bytes, a draining one reads its
    remainder untruncated, and every read holds the slot for bytes / R
    seconds.  The loop never needs to know how many connections are busy.
    """
    if not connections:
        raise NoConnections()
    if R <= 0:
        raise ValueError(f"rate limit must be positive, got {R}")
    if duration <= 0:
        raise ValueError(f"duration must be positive, got {duration}")
    n = len(connections)
    pending = np.array([c.pending0 for c in connections])
    starts = np.array([c.start_s for c in connections])
    mb_done = np.zeros(n)
    times, conns, mbs = [], [], []
    t = 0.0
    head = 0
    while t < duration:
        for step in range(n):
            i = (head + step) % n
            if starts[i] <= t and pending[i] > 0:
                break
        else:
            future = starts[(starts > t) & (pending > 0)]
            if future.size == 0:
                break
            t = float(future.min())
            continue
        head = i + 1
        c = connections[i]
        bytes_read = c.alpha * c.block_b if pending[i] >= c.block_b else pending[i]
        mb = bytes_read * MB_PER_BYTE
        slot = mb / R
        if t + slot > duration:
            frac = (duration - t) / slot
            bytes_read *= frac
            mb *= frac
            slot = duration - t
        pending[i] -= bytes_read
        t += slot
        mb_done[i] += mb
        times.append(t)
        conns.append(i)
        mbs.append(mb)
    return ScheduleResult(
        rates=mb_done / duration,
        read_times=np.array(times),
        read_conns=np.array(conns, dtype=int),
        read_mb=np.array(mbs),
        duration=duration,
    )
