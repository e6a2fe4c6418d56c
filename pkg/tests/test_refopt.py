import numpy as np
import pytest

from vvclab.env import VvcEnv
from vvclab.gridflow import network_from_dict, scale_impedances
from vvclab.refopt import (DispatchProblem, compute_action_table,
                           residual_norm_check, solve_dispatch)
from vvclab.scenario import (DeviceSpec, ScenarioSet, device_action_box,
                             exogenous_injections, generate_profiles)

from .conftest import two_bus_dict


@pytest.fixture
def two_bus_svc():
    net = network_from_dict(two_bus_dict(load_p=2.0, load_q=1.5))
    dev = [DeviceSpec(kind="svc", bus=1, s_mva=2.0, q_min=-2.0, q_max=2.0)]
    return net, dev


class TestSolveDispatch:
    def test_zero_load_zero_dispatch(self, two_bus_svc):
        net, dev = two_bus_svc
        z = np.zeros(2)
        sol = solve_dispatch(DispatchProblem(model=net, devices=dev, p_exo=z, q_exo=z))
        assert sol.converged
        assert abs(sol.a_m[0]) < 2e-3
        assert sol.objective == pytest.approx(0.0, abs=1e-9)

    def test_matches_1d_grid_oracle(self, two_bus_svc):
        net, dev = two_bus_svc
        p = np.array([0.0, -2.0])
        q = np.array([0.0, -1.5])
        prob = DispatchProblem(model=net, devices=dev, p_exo=p, q_exo=q)
        sol = solve_dispatch(prob)
        # independent oracle: exhaustive grid at 1e-3 MVar resolution
        from vvclab.gridflow import solve_power_flow_batch
        grid = np.arange(-2.0, 2.0 + 1e-9, 1e-3)
        qcols = np.tile(q[:, None], (1, len(grid)))
        qcols[1] += grid
        res = solve_power_flow_batch(net, np.tile(p[:, None], (1, len(grid))), qcols)
        viol = (np.maximum(res["v"] - 1.05, 0) + np.maximum(0.95 - res["v"], 0)).sum(0)
        obj = -res["loss"] - 50.0 * viol
        best = grid[np.argmax(obj)]
        assert sol.a_m[0] == pytest.approx(best, abs=2e-3)

    def test_objective_is_reevaluated_reward(self, case33, devices33, scenario33):
        p, q = exogenous_injections(case33, devices33, scenario33, 0, 40)
        sol = solve_dispatch(DispatchProblem(model=case33, devices=devices33,
                                             p_exo=p, q_exo=q))
        env = VvcEnv(case33, devices33, scenario33)
        assert env.evaluate_action(0, 40, sol.a_m).r == pytest.approx(sol.objective, abs=1e-12)

    def test_dispatch_beats_idle_devices(self, case33, devices33, scenario33):
        p, q = exogenous_injections(case33, devices33, scenario33, 0, 40)
        sol = solve_dispatch(DispatchProblem(model=case33, devices=devices33,
                                             p_exo=p, q_exo=q))
        env = VvcEnv(case33, devices33, scenario33)
        assert sol.objective >= env.evaluate_action(0, 40, np.zeros(4)).r

    def test_impedance_factor_one_is_identity(self, case33, devices33, scenario33):
        p, q = exogenous_injections(case33, devices33, scenario33, 0, 50)
        sol_acc = solve_dispatch(DispatchProblem(model=case33, devices=devices33,
                                                 p_exo=p, q_exo=q, seed=9))
        same = scale_impedances(case33, 1.0)
        sol_ref = solve_dispatch(DispatchProblem(model=same, devices=devices33,
                                                 p_exo=p, q_exo=q, seed=9))
        np.testing.assert_allclose(sol_ref.a_m, sol_acc.a_m, atol=2e-3)

    def test_feasibility_and_local_optimality(self, case33, devices33, scenario33):
        box = device_action_box(devices33)
        env = VvcEnv(case33, devices33, scenario33)
        for step in (10, 60):
            p, q = exogenous_injections(case33, devices33, scenario33, 0, step)
            sol = solve_dispatch(DispatchProblem(model=case33, devices=devices33,
                                                 p_exo=p, q_exo=q))
            assert np.all(sol.a_m >= box.a_low) and np.all(sol.a_m <= box.a_high)
            for j in range(len(sol.a_m)):
                for s in (1e-3, -1e-3):
                    probe = sol.a_m.copy()
                    probe[j] = np.clip(probe[j] + s, box.a_low[j], box.a_high[j])
                    assert env.evaluate_action(0, step, probe).r <= sol.objective + 1e-6


class TestBaselineDominance:
    def test_accurate_beats_reference_on_accurate_env(self, case33, devices33):
        scn = generate_profiles(case33, devices33, days=1, seed=21)
        ref = scale_impedances(case33, 1.5)
        env = VvcEnv(case33, devices33, scn)
        for step in range(0, 96, 12):
            p, q = exogenous_injections(case33, devices33, scn, 0, step)
            a_star = solve_dispatch(DispatchProblem(model=case33, devices=devices33,
                                                    p_exo=p, q_exo=q)).a_m
            a_m = solve_dispatch(DispatchProblem(model=ref, devices=devices33,
                                                 p_exo=p, q_exo=q)).a_m
            r_star = env.evaluate_action(0, step, a_star).r
            r_m = env.evaluate_action(0, step, a_m).r
            assert r_star >= r_m


class TestResidualNormCheck:
    def test_equal_actions_degenerate(self):
        a = np.array([0.5, -0.2])
        chk = residual_norm_check(a, a)
        assert chk.residual_norm == 0.0
        assert not chk.holds

    def test_zero_reference_uninformative(self):
        a_star = np.array([0.5, -0.2])
        chk = residual_norm_check(np.zeros(2), a_star)
        assert chk.residual_norm == pytest.approx(chk.optimal_norm)
        assert not chk.holds

    def test_informative_reference(self):
        chk = residual_norm_check(np.array([0.4, 0.0]), np.array([0.5, 0.1]))
        assert chk.holds
        assert 0 < chk.residual_norm < chk.optimal_norm


class TestActionTable:
    def test_cache_roundtrip(self, tmp_path, case33, devices33):
        scn = generate_profiles(case33, devices33, days=1, seed=3)
        sub = ScenarioSet(days=1, steps_per_day=4,
                          load_scale=scn.load_scale[:4], pv_output=scn.pv_output[:4],
                          seed=3)
        path = tmp_path / "cache.csv"
        t1 = compute_action_table(case33, devices33, sub, cache_path=path, cache_key="k1")
        assert path.exists()
        t2 = compute_action_table(case33, devices33, sub, cache_path=path, cache_key="k1")
        np.testing.assert_array_equal(t1, t2)

    def test_cache_key_mismatch_recomputes(self, tmp_path, case33, devices33):
        scn = generate_profiles(case33, devices33, days=1, seed=3)
        sub = ScenarioSet(days=1, steps_per_day=2,
                          load_scale=scn.load_scale[:2], pv_output=scn.pv_output[:2],
                          seed=3)
        path = tmp_path / "cache.csv"
        compute_action_table(case33, devices33, sub, cache_path=path, cache_key="k1")
        text_before = path.read_text()
        compute_action_table(case33, devices33, sub, cache_path=path, cache_key="other")
        assert path.read_text().startswith("# key=other")
        assert text_before.startswith("# key=k1")

    def test_table_deterministic(self, case33, devices33):
        scn = generate_profiles(case33, devices33, days=1, seed=3)
        sub = ScenarioSet(days=1, steps_per_day=3,
                          load_scale=scn.load_scale[:3], pv_output=scn.pv_output[:3],
                          seed=3)
        t1 = compute_action_table(case33, devices33, sub)
        t2 = compute_action_table(case33, devices33, sub)
        np.testing.assert_array_equal(t1, t2)
