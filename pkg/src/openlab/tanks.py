"""Simulated coupled-tank plant and its virtual-instrument facade.

Two vertically stacked tanks drained by gravity through fixed orifices, fed
by a voltage-driven pump that can be routed to either tank. Torricelli
outflow q = a * sqrt(2 g h); classical RK4 integration with hard clamping of
the levels into [0, h_max].
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, replace
from typing import Optional

from . import blocks
from .protocol import Direction, SyncClass, Value, WireType
from .runtime import VariableSpec, VirtualInstrument

GRAVITY = 981.0  # cm/s^2

VI_PATH = "plants/coupled_tanks.vi"
DEFAULT_PERIOD = 0.05  # s

ROUTE_TO_TOP = 0     # pump fills the top tank, which drains into the bottom one
ROUTE_TO_BOTTOM = 1  # pump fills the bottom tank directly


@dataclass(frozen=True)
class TankParams:
    """Bench-scale constants; all dimensions in cm, volts, seconds."""

    area: float = 15.52        # tank cross-section, cm^2
    a_top: float = 0.178       # top-tank outlet orifice, cm^2
    a_bot: float = 0.178       # bottom-tank outlet orifice, cm^2
    k_pump: float = 4.6        # pump gain, cm^3/(s*V)
    g: float = GRAVITY
    h_max: float = 30.0        # cm
    u_max: float = 10.0        # V

    def __post_init__(self):
        for name in ("area", "a_top", "a_bot", "k_pump", "g", "h_max", "u_max"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be strictly positive")
        if self.a_top > self.area or self.a_bot > self.area:
            raise ValueError("orifice areas cannot exceed the tank cross-section")


@dataclass(frozen=True)
class TankState:
    h_top: float
    h_bot: float
    u: float = 0.0             # committed pump command, V
    route: int = ROUTE_TO_TOP


def outflow(h: float, a: float, g: float = GRAVITY) -> float:
    """Torricelli orifice flow; the sqrt argument is clamped at zero."""
    return a * math.sqrt(2.0 * g * max(h, 0.0))


def derivatives(state: TankState, params: TankParams) -> tuple[float, float]:
    """(dh_top/dt, dh_bot/dt) for the current pump routing."""
    q_in = params.k_pump * state.u
    q_top = outflow(state.h_top, params.a_top, params.g)
    q_bot = outflow(state.h_bot, params.a_bot, params.g)
    if state.route == ROUTE_TO_TOP:
        dh_top = (q_in - q_top) / params.area
        dh_bot = (q_top - q_bot) / params.area
    else:
        dh_top = -q_top / params.area
        dh_bot = (q_in + q_top - q_bot) / params.area
    return dh_top, dh_bot


def integrate_step(state: TankState, params: TankParams, dt: float) -> TankState:
    """Advance the levels one RK4 step, then clamp into [0, h_max]."""

    def flow(_t, levels):
        return derivatives(replace(state, h_top=levels[0], h_bot=levels[1]), params)

    h_top, h_bot = blocks.rk4_step(flow, (state.h_top, state.h_bot), 0.0, dt)
    return replace(state,
                   h_top=min(max(h_top, 0.0), params.h_max),
                   h_bot=min(max(h_bot, 0.0), params.h_max))


def equilibrium_levels(u: float, params: TankParams, route: int = ROUTE_TO_TOP) -> tuple[float, float]:
    """Algebraic fixed point of the dynamics for a constant pump command.

    Levels are unclamped; callers choosing u so the fixed point is interior
    get the exact steady state of the continuous system.
    """
    q_in = params.k_pump * u
    if route == ROUTE_TO_TOP:
        h_top = (q_in / params.a_top) ** 2 / (2.0 * params.g)
        h_bot = (params.a_top / params.a_bot) ** 2 * h_top
    else:
        h_top = 0.0
        h_bot = (q_in / params.a_bot) ** 2 / (2.0 * params.g)
    return h_top, h_bot


def equilibrium_command(h_bot: float, params: TankParams, route: int = ROUTE_TO_TOP) -> float:
    """Pump command whose fixed point puts the bottom level at h_bot."""
    q_out = outflow(h_bot, params.a_bot, params.g)
    return q_out / params.k_pump


# ---------------------------------------------------------------------------
# Instrument facade
# ---------------------------------------------------------------------------

class CoupledTanksInstrument(VirtualInstrument):
    """Tank simulation behind the generic instrument interface.

    Controls: pump_u (V), route (0|1), noise_sigma (cm). Indicators: h_top,
    h_bot (cm) and t (s). Per step the committed controls drive one RK4
    advance; measurement noise (std noise_sigma, seedable) is drawn once per
    step when the indicator snapshot commits, so reads between steps repeat
    exactly. A second, independent tank unit can be enabled behind the same
    facade with a unit2_ variable prefix.
    """

    def __init__(self, params: TankParams = TankParams(), h0_top: float = 0.0,
                 h0_bot: float = 0.0, seed: Optional[int] = None,
                 period: float = DEFAULT_PERIOD, path: str = VI_PATH,
                 units: int = 1):
        if units not in (1, 2):
            raise ValueError("units must be 1 or 2")
        if not 0 <= h0_top <= params.h_max or not 0 <= h0_bot <= params.h_max:
            raise ValueError("initial levels must lie in [0, h_max]")
        self.path = path
        self.period = period
        self.params = params
        self.h0 = (h0_top, h0_bot)
        self.seed = seed
        self.units = units
        self.variables = self._declare("", h0_top, h0_bot)
        if units == 2:
            self.variables += self._declare("unit2_", h0_top, h0_bot)
        self._states: list[TankState] = []
        self._rng = random.Random(seed)
        self.reset()

    def _declare(self, prefix: str, h0_top: float, h0_bot: float) -> tuple[VariableSpec, ...]:
        p = self.params
        specs = [
            VariableSpec(prefix + "pump_u", Direction.CONTROL, WireType.FLOAT64,
                         SyncClass.SYNCHRONOUS, Value.float64(0.0),
                         minimum=0.0, maximum=p.u_max, safe=Value.float64(0.0)),
            VariableSpec(prefix + "route", Direction.CONTROL, WireType.INT32,
                         SyncClass.ASYNCHRONOUS, Value.int32(ROUTE_TO_TOP),
                         minimum=0, maximum=1),
            VariableSpec(prefix + "noise_sigma", Direction.CONTROL, WireType.FLOAT64,
                         SyncClass.ASYNCHRONOUS, Value.float64(0.0), minimum=0.0),
            VariableSpec(prefix + "h_top", Direction.INDICATOR, WireType.FLOAT64,
                         SyncClass.SYNCHRONOUS, Value.float64(h0_top)),
            VariableSpec(prefix + "h_bot", Direction.INDICATOR, WireType.FLOAT64,
                         SyncClass.SYNCHRONOUS, Value.float64(h0_bot)),
        ]
        if not prefix:
            specs.append(VariableSpec("t", Direction.INDICATOR, WireType.FLOAT64,
                                      SyncClass.SYNCHRONOUS, Value.float64(0.0)))
        return tuple(specs)

    def reset(self) -> None:
        self._states = [TankState(h_top=self.h0[0], h_bot=self.h0[1])
                        for _ in range(self.units)]
        self._rng = random.Random(self.seed)

    def step(self, controls, t, dt):
        out: dict[str, object] = {}
        for index in range(self.units):
            prefix = "" if index == 0 else "unit2_"
            state = replace(self._states[index],
                            u=float(controls[prefix + "pump_u"]),
                            route=int(controls[prefix + "route"]))
            state = integrate_step(state, self.params, dt)
            self._states[index] = state
            sigma = float(controls[prefix + "noise_sigma"])
            h_top, h_bot = state.h_top, state.h_bot
            if sigma > 0.0:
                h_top += self._rng.gauss(0.0, sigma)
                h_bot += self._rng.gauss(0.0, sigma)
            out[prefix + "h_top"] = h_top
            out[prefix + "h_bot"] = h_bot
        out["t"] = t
        return out


def instrument_facade(params: TankParams = TankParams(), **kwargs) -> CoupledTanksInstrument:
    """The coupled-tank virtual instrument with default registration path."""
    return CoupledTanksInstrument(params=params, **kwargs)


# Gains for the default plant found by the coarse grid search in
# tools/tune_gains.py (see README); they settle a 0 -> 10 cm bottom-level
# step well inside 300 s under both sampler placements.
TUNED_PID = blocks.PidParams(kp=1.2, ki=0.06, kd=0.0, n=20.0, u_min=0.0, u_max=10.0)
TUNED_DELTA = 0.02
