"""Tank plant: derivative formulas, clamped RK4 integration, facade metadata."""

import math
import random
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openlab.protocol import Direction, SyncClass, WireType
from openlab.tanks import (
    ROUTE_TO_BOTTOM, ROUTE_TO_TOP, VI_PATH, CoupledTanksInstrument, TankParams,
    TankState, derivatives, equilibrium_command, equilibrium_levels,
    instrument_facade, integrate_step, outflow,
)


class TestDerivatives:
    def test_empty_tanks_no_input(self):
        state = TankState(h_top=0.0, h_bot=0.0, u=0.0)
        assert derivatives(state, TankParams()) == (0.0, 0.0)

    def test_algebraic_equilibrium_is_a_fixed_point(self):
        params = TankParams()
        u = 3.0
        h_top, h_bot = equilibrium_levels(u, params, ROUTE_TO_TOP)
        state = TankState(h_top=h_top, h_bot=h_bot, u=u, route=ROUTE_TO_TOP)
        dh_top, dh_bot = derivatives(state, params)
        assert abs(dh_top) < 1e-12 and abs(dh_bot) < 1e-12

    def test_default_params_hand_evaluated(self):
        # frozen from a direct scalar evaluation of the two formulas
        state = TankState(h_top=5.0, h_bot=5.0, u=3.0, route=ROUTE_TO_TOP)
        dh_top, dh_bot = derivatives(state, TankParams())
        assert dh_top == pytest.approx(-0.24678408843595892, rel=1e-14)
        assert dh_bot == 0.0

    def test_route_to_bottom_hand_evaluated(self):
        state = TankState(h_top=5.0, h_bot=5.0, u=3.0, route=ROUTE_TO_BOTTOM)
        dh_top, dh_bot = derivatives(state, TankParams())
        assert dh_top == pytest.approx(-1.1359593461679176, rel=1e-14)
        assert dh_bot == pytest.approx(0.8891752577319586, rel=1e-14)

    def test_outflow_clamps_negative_levels(self):
        assert outflow(-1.0, 0.178) == 0.0


class TestIntegrateStep:
    def test_vanishing_dt_limit(self):
        params = TankParams()
        state = TankState(h_top=5.0, h_bot=3.0, u=2.0)
        nxt = integrate_step(state, params, 1e-12)
        assert abs(nxt.h_top - state.h_top) < 1e-9
        assert abs(nxt.h_bot - state.h_bot) < 1e-9

    def test_constant_input_converges_to_fixed_point(self):
        params = TankParams()
        u = 3.0
        want_top, want_bot = equilibrium_levels(u, params, ROUTE_TO_TOP)
        state = TankState(h_top=0.0, h_bot=0.0, u=u)
        for _ in range(40000):  # 2000 s at dt = 0.05
            state = integrate_step(state, params, 0.05)
        assert abs(state.h_top - want_top) < 1e-6
        assert abs(state.h_bot - want_bot) < 1e-6

    def test_drain_monotonic_with_pump_off(self):
        params = TankParams()
        state = TankState(h_top=5.0, h_bot=5.0, u=0.0)
        tops, bots = [state.h_top], [state.h_bot]
        for _ in range(4000):
            state = integrate_step(state, params, 0.05)
            tops.append(state.h_top)
            bots.append(state.h_bot)
        assert all(b <= a + 1e-15 for a, b in zip(tops, tops[1:]))
        peak = bots.index(max(bots))
        assert all(b <= a + 1e-15 for a, b in zip(bots[peak:], bots[peak + 1:]))
        assert state.h_top < 0.05  # essentially empty after 200 s

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.floats(0.0, 10.0), min_size=1, max_size=100),
           st.integers(0, 1))
    def test_levels_always_clamped(self, u_trace, route):
        params = TankParams(h_max=12.0)
        state = TankState(h_top=6.0, h_bot=6.0, route=route)
        for u in u_trace:
            state = integrate_step(replace(state, u=u), params, 0.5)
            assert 0.0 <= state.h_top <= params.h_max
            assert 0.0 <= state.h_bot <= params.h_max

    def test_trajectory_is_deterministic(self):
        params = TankParams()
        rng = random.Random(3)
        trace = [rng.uniform(0, 10) for _ in range(500)]

        def run():
            state = TankState(h_top=1.0, h_bot=1.0)
            out = []
            for u in trace:
                state = integrate_step(replace(state, u=u), params, 0.05)
                out.append((state.h_top, state.h_bot))
            return out

        assert run() == run()

    def test_equilibrium_matches_fixed_point_for_random_params(self):
        rng = random.Random(11)
        for _ in range(5):
            params = TankParams(area=rng.uniform(8, 25),
                                a_top=rng.uniform(0.1, 0.4),
                                a_bot=rng.uniform(0.1, 0.4))
            h_target = rng.uniform(2.0, 0.6 * params.h_max)
            u = equilibrium_command(h_target, params)
            want_top, want_bot = equilibrium_levels(u, params)
            if max(want_top, want_bot) > 0.9 * params.h_max:
                continue
            state = TankState(h_top=want_top * 1.2, h_bot=want_bot * 0.8, u=u)
            tau = max(params.area * 2.0 * math.sqrt(max(h, 1.0)) / (a * math.sqrt(2 * params.g))
                      for h, a in ((want_top, params.a_top), (want_bot, params.a_bot)))
            steps = int(35 * tau / 0.05)
            for _ in range(steps):
                state = integrate_step(state, params, 0.05)
            assert abs(state.h_top - want_top) < 1e-6
            assert abs(state.h_bot - want_bot) < 1e-6


class TestParams:
    def test_positivity_enforced(self):
        with pytest.raises(ValueError):
            TankParams(area=0.0)
        with pytest.raises(ValueError):
            TankParams(k_pump=-1.0)

    def test_orifice_cannot_exceed_cross_section(self):
        with pytest.raises(ValueError):
            TankParams(area=1.0, a_top=2.0)


class TestFacade:
    def test_metadata_lists_exactly_six_variables(self):
        vi = instrument_facade()
        names = [spec.name for spec in vi.variables]
        assert names == ["pump_u", "route", "noise_sigma", "h_top", "h_bot", "t"]
        assert vi.path == VI_PATH

    def test_variable_declarations(self):
        vi = instrument_facade()
        by_name = {spec.name: spec for spec in vi.variables}
        pump = by_name["pump_u"]
        assert pump.direction is Direction.CONTROL
        assert pump.wire_type is WireType.FLOAT64
        assert pump.sync_class is SyncClass.SYNCHRONOUS
        assert (pump.minimum, pump.maximum) == (0.0, TankParams().u_max)
        assert pump.safe.raw == 0.0
        assert by_name["route"].wire_type is WireType.INT32
        assert by_name["route"].sync_class is SyncClass.ASYNCHRONOUS
        assert by_name["h_bot"].direction is Direction.INDICATOR
        assert by_name["h_bot"].safe is None

    def test_step_advances_levels(self):
        vi = instrument_facade(h0_top=5.0, h0_bot=5.0)
        controls = {"pump_u": 0.0, "route": 0, "noise_sigma": 0.0}
        out = vi.step(controls, 0.05, 0.05)
        assert out["h_top"] < 5.0
        assert out["t"] == 0.05

    def test_reset_restores_initial_levels(self):
        vi = instrument_facade(h0_top=2.0, h0_bot=1.0)
        controls = {"pump_u": 5.0, "route": 0, "noise_sigma": 0.0}
        for k in range(10):
            vi.step(controls, (k + 1) * 0.05, 0.05)
        vi.reset()
        out = vi.step({"pump_u": 0.0, "route": 0, "noise_sigma": 0.0}, 0.05, 0.05)
        # one pump-off step from the restored (2.0, 1.0): top drains a little,
        # bottom picks up the top's outflow
        assert 1.9 < out["h_top"] < 2.0
        assert 1.0 < out["h_bot"] < 1.1

    def test_noise_is_seeded_and_reproducible(self):
        def trace(seed):
            vi = instrument_facade(h0_top=5.0, h0_bot=5.0, seed=seed)
            controls = {"pump_u": 2.0, "route": 0, "noise_sigma": 0.1}
            return [vi.step(controls, (k + 1) * 0.05, 0.05)["h_bot"] for k in range(20)]

        assert trace(1) == trace(1)
        assert trace(1) != trace(2)

    def test_zero_noise_reads_are_exact(self):
        vi = instrument_facade(h0_top=5.0, h0_bot=5.0, seed=1)
        controls = {"pump_u": 2.0, "route": 0, "noise_sigma": 0.0}
        noisy_free = vi.step(controls, 0.05, 0.05)
        vi2 = instrument_facade(h0_top=5.0, h0_bot=5.0, seed=99)
        assert vi2.step(controls, 0.05, 0.05) == noisy_free

    def test_second_unit_variables(self):
        vi = instrument_facade(units=2)
        names = [spec.name for spec in vi.variables]
        assert "unit2_pump_u" in names and "unit2_h_bot" in names
        assert len(names) == 11
        controls = {"pump_u": 3.0, "route": 0, "noise_sigma": 0.0,
                    "unit2_pump_u": 0.0, "unit2_route": 1, "unit2_noise_sigma": 0.0}
        out = vi.step(controls, 0.05, 0.05)
        assert out["h_top"] > 0.0 and out["unit2_h_top"] == 0.0

    def test_initial_levels_validated(self):
        with pytest.raises(ValueError):
            instrument_facade(h0_top=-1.0)
        with pytest.raises(ValueError):
            CoupledTanksInstrument(units=3)
