"""Process-control block library.

Fixed-step building blocks for event-based control loops: a parallel-form
PID, a send-on-delta sampler, a classical RK4 solver, bisection refinement
of event times, and the assembly of the two sampled-loop topologies
(sampler on the error signal, or sampler on the controller output).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Optional, Sequence, Union


class BlockKind(Enum):
    """Dispatch class of a block inside a loop scheduler."""

    CONTINUOUS = "continuous"    # exposes derivatives; advanced by the solver
    DISCRETE = "discrete"        # state update at a fixed period
    EVENT_BASED = "event_based"  # state update only when a condition changes
    HYBRID = "hybrid"            # continuous flow plus condition-triggered jumps


# ---------------------------------------------------------------------------
# PID controller (parallel form kp + ki/s + kd*s, discretized)
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class PidParams:
    """Gains and limits for the parallel-form controller."""

    kp: float
    ki: float
    kd: float
    n: float = 20.0                  # derivative filter pole (1/s)
    u_min: float = -math.inf
    u_max: float = math.inf

    def __post_init__(self):
        if self.n <= 0:
            raise ValueError("derivative filter coefficient n must be > 0")
        if not self.u_min < self.u_max:
            raise ValueError("u_min must be below u_max")


@dataclass(frozen=True, slots=True)
class PidState:
    """Controller memory: integral, filtered derivative, previous error."""

    integral: float = 0.0
    derivative: float = 0.0
    e_prev: float = 0.0
    first_step: bool = True

    kind = BlockKind.DISCRETE


def pid_reset() -> PidState:
    return PidState()


def pid_step(state: PidState, params: PidParams, e: float, dt: float) -> tuple[PidState, float]:
    """One fixed-step controller update; returns (new state, output u).

    Exact recurrences:
      integral    I_k = I_{k-1} + ki * e_k * dt          (backward Euler)
      derivative  D_k = (D_{k-1} + kd * n * (e_k - e_{k-1})) / (1 + n * dt)
                  (first-order filter with pole n; n -> inf recovers the raw
                  difference quotient), with D_k = 0 on the first step after
                  reset so a setpoint change causes no derivative kick.
      output      u_k = clamp(kp * e_k + I_k + D_k, u_min, u_max)

    Anti-windup is conditional integration: whenever the unclamped output is
    saturated and the current error pushes it further out, the integral
    update is discarded for the next step.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    integral = state.integral + params.ki * e * dt
    if state.first_step:
        derivative = 0.0
    else:
        derivative = (state.derivative + params.kd * params.n * (e - state.e_prev)) / (1.0 + params.n * dt)
    u_raw = params.kp * e + integral + derivative
    u = min(max(u_raw, params.u_min), params.u_max)
    pushing_out = (u_raw > params.u_max and params.ki * e > 0) or \
                  (u_raw < params.u_min and params.ki * e < 0)
    if pushing_out:
        integral = state.integral
    return PidState(integral, derivative, e, False), u


# ---------------------------------------------------------------------------
# Send-on-delta sampler
# ---------------------------------------------------------------------------

@dataclass(frozen=True, slots=True)
class SodState:
    """Sampler memory: threshold, last emitted value/time, grid offset.

    `alpha` is the offset of the initial value from the delta-spaced grid,
    v0 - floor(v0/delta)*delta; it is recorded for diagnostics only and does
    not affect emission (the sampler emits raw crossing values).
    """

    delta: float
    v_last: float
    t_last: float
    alpha: float
    initialized: bool = True

    kind = BlockKind.EVENT_BASED


def sod_init(v0: float, t0: float, delta: float) -> SodState:
    """Initialize the sampler; the initial emission is v0 itself."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    alpha = v0 - math.floor(v0 / delta) * delta
    return SodState(delta=delta, v_last=v0, t_last=t0, alpha=alpha)


def sod_update(state: SodState, v: float, t: float) -> tuple[SodState, Optional[float]]:
    """Feed one sample; returns (state', emitted value or None).

    An event fires when the input departs from the last emitted value by at
    least delta (inclusive threshold); between events the held output is
    state.v_last.
    """
    if t < state.t_last:
        raise ValueError("time must not run backwards")
    if abs(v - state.v_last) >= state.delta:
        return replace(state, v_last=v, t_last=t), v
    return state, None


def refine_event_time(v: Callable[[float], float], state: SodState,
                      t_lo: float, t_hi: float, tol: float) -> float:
    """Bisect the crossing of |v(t) - v_last| - delta inside [t_lo, t_hi].

    Returns t_lo when the indicator is already non-negative there; otherwise
    narrows the bracket to `tol` and returns its upper end (the first grid
    point known to satisfy the crossing).
    """
    def indicator(t: float) -> float:
        return abs(v(t) - state.v_last) - state.delta

    if indicator(t_lo) >= 0:
        return t_lo
    if indicator(t_hi) < 0:
        raise ValueError("no sign change of the crossing indicator in the bracket")
    lo, hi = t_lo, t_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if indicator(mid) >= 0:
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# Fixed-step solver
# ---------------------------------------------------------------------------

State = Union[float, Sequence[float]]


def rk4_step(flow: Callable[[float, State], State], x: State, t: float, dt: float) -> State:
    """Classical fourth-order Runge-Kutta advance of dx/dt = flow(t, x).

    Works on a bare float or on a sequence of floats (returned as a tuple).
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if isinstance(x, (int, float)):
        k1 = flow(t, x)
        k2 = flow(t + 0.5 * dt, x + 0.5 * dt * k1)
        k3 = flow(t + 0.5 * dt, x + 0.5 * dt * k2)
        k4 = flow(t + dt, x + dt * k3)
        return x + dt * (k1 + 2.0 * k2 + 2.0 * k3 + k4) / 6.0
    x = tuple(x)
    k1 = flow(t, x)
    k2 = flow(t + 0.5 * dt, tuple(xi + 0.5 * dt * ki for xi, ki in zip(x, k1)))
    k3 = flow(t + 0.5 * dt, tuple(xi + 0.5 * dt * ki for xi, ki in zip(x, k2)))
    k4 = flow(t + dt, tuple(xi + dt * ki for xi, ki in zip(x, k3)))
    return tuple(xi + dt * (a + 2.0 * b + 2.0 * c + d) / 6.0
                 for xi, a, b, c, d in zip(x, k1, k2, k3, k4))


# ---------------------------------------------------------------------------
# Loop assembly
# ---------------------------------------------------------------------------

class Placement(Enum):
    """Where the send-on-delta sampler sits in the loop."""

    ERROR_SAMPLED = "error"      # sampler between error signal and controller
    CONTROL_SAMPLED = "control"  # sampler between controller and plant


@dataclass
class LoopConfig:
    """Tunable loop parameters; mutable so a live session can retune them."""

    placement: Placement
    setpoint: float
    pid: PidParams
    delta: float
    dt: float = 0.01
    refine_events: bool = True
    refine_tol: Optional[float] = None  # defaults to dt / 64

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.delta <= 0:
            raise ValueError("delta must be positive")


@dataclass(slots=True)
class LoopRecord:
    """One loop step: time, setpoint, output, error, control, sampler state."""

    t: float
    r: float
    y: float
    e: float
    u: float
    sampled: float
    event: bool
    event_time: Optional[float] = None


class PlantBinding:
    """What the loop needs from a plant, local or remote.

    read_output() -> float     current process output
    write_control(u) -> None   deliver a control value
    advance(dt) -> None        move plant time forward by one loop period
    close() -> None            release resources
    """

    def read_output(self) -> float:
        raise NotImplementedError

    def write_control(self, u: float) -> None:
        raise NotImplementedError

    def advance(self, dt: float) -> None:
        raise NotImplementedError

    def close(self) -> None:
        pass


class ControlLoop:
    """One sampled PID loop around a plant binding.

    Per step: read the output, form the error, run the sampler and the
    controller in the order the placement dictates, deliver the control,
    then advance the plant by dt. With the sampler on the controller output
    the control value is delivered only when an event fires (the plant holds
    the previous value), which is what cuts the transmission rate on a
    remote binding.
    """

    def __init__(self, cfg: LoopConfig, plant: PlantBinding):
        self.cfg = cfg
        self.plant = plant
        self._pid = pid_reset()
        self._sod: Optional[SodState] = None
        self._held = 0.0
        self._prev_raw = 0.0
        self._steps = 0

    @property
    def steps(self) -> int:
        return self._steps

    def reset_sampler(self) -> None:
        """Drop sampler memory; it re-initializes on the next step."""
        self._sod = None

    def reset_controller(self) -> None:
        self._pid = pid_reset()

    def _sample(self, raw: float, t: float) -> tuple[bool, Optional[float]]:
        """Run the sampler on one raw value; updates the held output."""
        cfg = self.cfg
        if self._sod is None:
            self._sod = sod_init(raw, t, cfg.delta)
            self._held = raw
            self._prev_raw = raw
            return True, t
        before = self._sod
        self._sod, emitted = sod_update(self._sod, raw, t)
        event_time = None
        if emitted is not None:
            self._held = emitted
            if cfg.refine_events and t > before.t_last:
                tol = cfg.refine_tol if cfg.refine_tol is not None else cfg.dt / 64.0
                t0, v0 = t - cfg.dt, self._prev_raw
                slope = (raw - v0) / cfg.dt
                event_time = refine_event_time(lambda tau: v0 + slope * (tau - t0),
                                               before, t0, t, tol)
            else:
                event_time = t
        self._prev_raw = raw
        return emitted is not None, event_time

    def step(self) -> LoopRecord:
        """Execute one loop period and return its record."""
        cfg = self.cfg
        t = self._steps * cfg.dt
        y = self.plant.read_output()
        e = cfg.setpoint - y
        if cfg.placement is Placement.ERROR_SAMPLED:
            fired, event_time = self._sample(e, t)
            self._pid, u = pid_step(self._pid, cfg.pid, self._held, cfg.dt)
            self.plant.write_control(u)
            sampled = self._held
        else:
            self._pid, u = pid_step(self._pid, cfg.pid, e, cfg.dt)
            fired, event_time = self._sample(u, t)
            if fired:
                self.plant.write_control(self._held)
            sampled = self._held
        self.plant.advance(cfg.dt)
        self._steps += 1
        return LoopRecord(t=t, r=cfg.setpoint, y=y, e=e, u=u,
                          sampled=sampled, event=fired, event_time=event_time)

    def run(self, n_steps: int) -> list[LoopRecord]:
        return [self.step() for _ in range(n_steps)]


TRACE_COLUMNS = ("t", "r", "y", "e", "u", "sampled", "event")


def record_row(rec: LoopRecord) -> list:
    """CSV row for a loop record (event flag as 0/1)."""
    return [rec.t, rec.r, rec.y, rec.e, rec.u, rec.sampled, int(rec.event)]
