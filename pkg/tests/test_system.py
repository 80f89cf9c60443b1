"""Reservoir-system tests: feasibility, profit, mass balance, stage-LP
correctness against exhaustive enumeration, concavity and monotonicity of the
deterministic value function, and config handling."""

import json

import numpy as np
import pytest

from hydro_adp import lp
from hydro_adp import system as sysm

from test_lp import enumerate_optimum


@pytest.fixture(scope="module")
def cascade():
    return sysm.load_shipped_system("norwegian_cascade")


@pytest.fixture(scope="module")
def network():
    return sysm.load_shipped_system("kwo_network")


def exo(t, price, inflows):
    return sysm.StageExogenous(t=t, price=price, inflows=np.asarray(inflows, float))


class TestFeasibility:
    def test_zero_decision_feasible(self, cascade):
        lvl = cascade.level_initial()
        ok = sysm.feasible(cascade, lvl, exo(0, 20.0, [0.0, 0.0]), [0.0, 0.0],
                           sysm.StageDecision(discharges=[0.0, 0.0]))
        assert ok

    def test_discharge_cap_binding(self, cascade):
        lvl = cascade.level_max()
        e = exo(1, 20.0, [0.0, 0.0])
        good = sysm.StageDecision(discharges=[57.96, 121.36])
        bad = sysm.StageDecision(discharges=[57.97, 0.0])
        assert sysm.feasible(cascade, lvl - 200.0, e, [0.0, 0.0], good)
        assert not sysm.feasible(cascade, lvl, e, [0.0, 0.0], bad)

    def test_level_floor_violation(self, cascade):
        lvl = cascade.level_min()
        dec = sysm.StageDecision(discharges=[1.0, 0.0])
        assert not sysm.feasible(cascade, lvl, exo(1, 20.0, [0.0, 0.0]),
                                 [0.0, 0.0], dec)

    def test_upcoming_inflow_can_overflow(self, cascade):
        # a full reservoir is infeasible if next-hour inflow exceeds capacity
        lvl = cascade.level_max()
        dec = sysm.StageDecision(discharges=[57.96, 121.36])
        assert not sysm.feasible(cascade, lvl, exo(1, 20.0, [0.0, 0.0]),
                                 [100.0, 0.0], dec)

    def test_network_flow_bounds(self, network):
        f = np.zeros(network.n_tunnels)
        lvl = network.level_initial()
        e = exo(1, 20.0, np.zeros(6))
        assert sysm.feasible(network, lvl, e, np.zeros(6),
                             sysm.StageDecision(flows=f))
        f_bad = f.copy()
        f_bad[0] = 2.53              # above flow_max 2.52
        assert not sysm.feasible(network, lvl, e, np.zeros(6),
                                 sysm.StageDecision(flows=f_bad))

    def test_network_station_throughput_cap(self, network):
        # reservoir 3 discharges through tunnels 6 and 8; their sum is capped
        # by its discharge_max 3.02 even though each tunnel alone allows more
        f = np.zeros(network.n_tunnels)
        f[6], f[8] = 2.5, 0.6         # releases 3->4 and 3->5, sum 3.1
        lvl = (network.level_min() + network.level_max()) / 2.0
        lvl[5] = network.level_min()[5]   # headroom so only the cap binds
        e = exo(1, 20.0, np.zeros(6))
        assert not sysm.feasible(network, lvl, e, np.zeros(6),
                                 sysm.StageDecision(flows=f))
        f[8] = 0.5                    # sum 3.0 <= discharge_max 3.02
        assert sysm.feasible(network, lvl, e, np.zeros(6),
                             sysm.StageDecision(flows=f))


class TestProfitAndBalance:
    def test_cascade_profit_value(self, cascade):
        dec = sysm.StageDecision(discharges=[1.0, 1.0])
        val = sysm.stage_profit(cascade, exo(1, 20.0, [0.0, 0.0]), dec)
        assert val == pytest.approx(20.0 * (0.1101 + 0.5051))

    def test_network_pumping_costs(self, network):
        f = np.zeros(network.n_tunnels)
        f[1] = 1.0                    # pump on the 0.10-rate tunnel
        val = sysm.stage_profit(network, exo(1, 30.0, np.zeros(6)),
                                sysm.StageDecision(flows=f))
        assert val == pytest.approx(-30.0 * 0.10)

    def test_mass_balance_exact(self, cascade):
        rng = np.random.default_rng(0)
        lvl = cascade.level_initial().copy()
        R = cascade.balance_matrix()
        for _ in range(200):
            pi = rng.uniform(0.0, 5.0, size=2)
            nu = rng.uniform(0.0, 3.0, size=2)
            nxt = sysm.advance_level(cascade, lvl, nu, sysm.StageDecision(discharges=pi))
            assert np.max(np.abs(nxt - (lvl + nu + R @ pi))) <= sysm.MASS_TOL
            lvl = nxt

    def test_network_pump_loses_water(self, network):
        # pumping 1 unit uphill removes 1 from the source, delivers only eta
        f = np.zeros(network.n_tunnels)
        f[1] = 1.0                    # pump reservoir 3 -> 0
        lvl = network.level_initial()
        nxt = sysm.advance_level(network, lvl, np.zeros(6),
                                 sysm.StageDecision(flows=f))
        assert nxt[3] == pytest.approx(lvl[3] - 1.0)
        assert nxt[0] == pytest.approx(lvl[0] + 0.6)
        assert np.sum(nxt) == pytest.approx(np.sum(lvl) - 0.4)


class TestStageLp:
    def test_matches_vertex_enumeration(self, cascade):
        rng = np.random.default_rng(1)
        for _ in range(8):
            lvl = rng.uniform(cascade.level_min() + 5, cascade.level_min() + 60)
            nu = rng.uniform(0.0, 10.0, size=2)
            nxt_nu = rng.uniform(0.0, 10.0, size=2)
            a = rng.uniform(0.0, 3.0, size=2)
            p = sysm.build_stage_lp(cascade, lvl, nu,
                                    exo(1, rng.uniform(5, 40), nxt_nu), a)
            sol = lp.solve(p)
            assert sol.status == "optimal"
            oracle, _ = enumerate_optimum(p)
            assert sol.value == pytest.approx(oracle, rel=1e-9, abs=1e-8)

    def test_solution_slices_balance(self, cascade):
        lvl = cascade.level_initial()
        nu = np.array([3.0, 1.0])
        e = exo(1, 25.0, [2.0, 2.0])
        p = sysm.build_stage_lp(cascade, lvl, nu, e, np.array([1.0, 1.0]))
        sol = lp.solve(p)
        dec = sysm.stage_solution_decision(cascade, sol.x)
        nxt = sysm.stage_solution_level(cascade, sol.x)
        manual = sysm.advance_level(cascade, lvl, nu, dec)
        assert np.max(np.abs(nxt - manual)) <= sysm.MASS_TOL

    def test_spill_columns_inactive_when_strictly_feasible(self, cascade):
        lvl = cascade.level_initial()
        nu = np.array([3.0, 1.0])
        e = exo(1, 25.0, [2.0, 2.0])
        strict = lp.solve(sysm.build_stage_lp(cascade, lvl, nu, e, np.array([1.0, 1.0])))
        relaxed = lp.solve(sysm.build_stage_lp(cascade, lvl, nu, e,
                                               np.array([1.0, 1.0]), allow_spill=True))
        spill = sysm.stage_solution_spill(cascade, relaxed.x)
        assert np.max(spill) <= 1e-9
        assert relaxed.value == pytest.approx(strict.value, rel=1e-9, abs=1e-7)

    def test_spill_rescues_overflow_corner(self, cascade):
        # full reservoir, inflow above discharge capacity: strictly infeasible
        lvl = cascade.level_max()
        nu = np.zeros(2)
        e = exo(1, 25.0, [100.0, 0.0])
        strict = lp.solve(sysm.build_stage_lp(cascade, lvl, nu, e, np.zeros(2)))
        assert strict.status == "infeasible"
        relaxed = lp.solve(sysm.build_stage_lp(cascade, lvl, nu, e, np.zeros(2),
                                               allow_spill=True))
        assert relaxed.status == "optimal"
        spill = sysm.stage_solution_spill(cascade, relaxed.x)
        assert spill[0] == pytest.approx(100.0 - 57.96, abs=1e-6)

    def test_terminal_mode_values_final_inflow(self, cascade):
        lvl = cascade.level_initial()
        e = exo(47, 25.0, [2.0, 3.0])
        p = sysm.build_stage_lp(cascade, lvl, np.zeros(2), e, None, terminal=18.0)
        g = cascade.terminal_conversion()
        assert p.offset == pytest.approx(18.0 * (g @ np.array([2.0, 3.0])))

    def test_network_no_pumping_without_future_value(self, network):
        # zero continuation: pumping burns energy for nothing, so optimal
        # tunnel flows never pump
        lvl = (network.level_min() + network.level_max()) / 2.0
        e = exo(1, 30.0, np.zeros(6))
        p = sysm.build_stage_lp(network, lvl, np.zeros(6), e, np.zeros(6))
        sol = lp.solve(p)
        assert sol.status == "optimal"
        flows = sol.x[:network.n_tunnels]
        pump_cols = [g for g, t in enumerate(network.tunnels)
                     if t.direction == "pump"]
        assert np.max(flows[pump_cols]) <= 1e-9


class TestDeterministicValueFunction:
    T = 24

    @staticmethod
    def _paths(T):
        rng = np.random.default_rng(17)
        prices = 20.0 + 5.0 * np.sin(np.arange(T) / 4.0) + rng.normal(0, 2.0, T)
        inflows = np.clip(rng.normal(8.0, 3.0, size=(T, 2)), 0.0, None)
        return prices, inflows

    def _value_at(self, cascade, l0_upper):
        prices, inflows = self._paths(self.T)
        specs = list(cascade.reservoirs)
        r0 = specs[0]
        specs[0] = sysm.ReservoirSpec(r0.id, r0.level_min, r0.level_max,
                                      r0.discharge_min, r0.discharge_max,
                                      l0_upper, r0.conversion_rate)
        system = sysm.ReservoirSystem(kind="cascade", reservoirs=tuple(specs),
                                      cascade_topology=cascade.cascade_topology)
        sol = sysm.solve_full_horizon(system, prices, inflows, 20.0)
        assert sol.status == "optimal"
        return sol.value

    def test_midpoint_concavity_on_grid(self, cascade):
        grid = np.linspace(150.0, 1000.0, 11)
        vals = np.array([self._value_at(cascade, l) for l in grid])
        mid = (vals[:-2] + vals[2:]) / 2.0
        assert np.all(vals[1:-1] >= mid - 1e-6)

    def test_monotone_in_initial_level(self, cascade):
        grid = np.linspace(150.0, 1000.0, 11)
        vals = np.array([self._value_at(cascade, l) for l in grid])
        assert np.all(np.diff(vals) >= -1e-9)

    def test_full_horizon_balance_rows_exact(self, cascade):
        prices, inflows = self._paths(self.T)
        p = sysm.build_full_horizon_lp(cascade, prices, inflows, 20.0)
        sol = lp.solve(p)
        assert sol.status == "optimal"
        resid = np.max(np.abs(p.eq_matrix @ sol.x - p.eq_rhs))
        assert resid <= sysm.MASS_TOL * (1.0 + np.max(np.abs(p.eq_rhs)))

    def test_one_stage_horizon_matches_stage_lp(self, cascade):
        prices = np.array([22.0])
        inflows = np.array([[4.0, 6.0]])
        full = sysm.solve_full_horizon(cascade, prices, inflows, 19.0)
        stage = lp.solve(sysm.build_stage_lp(
            cascade, cascade.level_initial(), np.zeros(2),
            exo(0, 22.0, inflows[0]), None, terminal=19.0))
        assert full.value == pytest.approx(stage.value, rel=1e-10)


class TestConfig:
    def test_roundtrip(self, cascade, network):
        for s in (cascade, network):
            again = sysm.system_from_dict(sysm.system_to_dict(s))
            assert again.config_hash() == s.config_hash()

    def test_missing_file_named_in_error(self, tmp_path):
        missing = tmp_path / "nope.json"
        with pytest.raises(sysm.SystemConfigError, match="nope.json"):
            sysm.load_system(missing)

    def test_invalid_json_named_in_error(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        with pytest.raises(sysm.SystemConfigError, match="bad.json"):
            sysm.load_system(bad)

    def test_missing_field_rejected(self):
        with pytest.raises(sysm.SystemConfigError, match="level_max"):
            sysm.system_from_dict({"kind": "cascade", "reservoirs": [
                {"level_min": 0.0, "level_initial": 1.0, "discharge_max": 1.0}]})

    def test_bad_bounds_rejected(self):
        with pytest.raises(sysm.SystemConfigError):
            sysm.ReservoirSpec(0, level_min=10.0, level_max=5.0,
                               discharge_min=0.0, discharge_max=1.0,
                               level_initial=7.0)

    def test_bad_pump_efficiency_rejected(self, network):
        data = sysm.system_to_dict(network)
        data["pump_efficiency"] = 1.5
        with pytest.raises(sysm.SystemConfigError):
            sysm.system_from_dict(data)

    def test_unknown_shipped_name(self):
        with pytest.raises(sysm.SystemConfigError, match="mystery"):
            sysm.shipped_config_path("mystery")

    def test_terminal_conversion_network_best_release(self, network):
        g = network.terminal_conversion()
        assert g[3] == pytest.approx(0.10)   # best of releases 3->4 and 3->5
        assert g[4] == 0.0                   # reservoirs 4 and 5 only pump out
        assert g[5] == 0.0
