"""Single-period Volt-Var MDP over the accurate feeder model.

One episode is one day of 96 steps.  The exogenous load/PV trajectory is
fixed by the scenario, so the next state never depends on the action other
than through the device setpoints carried in the observation; that is what
makes a reward-regression (gamma = 0) agent appropriate.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import scenario as scn_mod
from .gridflow import Network, PowerFlowError, solve_power_flow_batch
from .scenario import DeviceSpec, ScenarioSet

BOX_SLACK = 1e-9   # tolerated float dust when asserting actions in-box


@dataclass(frozen=True)
class VoltageLimits:
    v_min: float = 0.95
    v_max: float = 1.05

    def __post_init__(self):
        if not 0 < self.v_min < self.v_max:
            raise ValueError("need 0 < v_min < v_max")


@dataclass
class RewardBreakdown:
    r_p: float      # MW, negated loss, <= 0
    r_v: float      # p.u.-sum, negated violation, <= 0
    r: float        # r_p + c_v * r_v
    c_v: float


@dataclass
class State:
    p: np.ndarray    # MW net injection per bus (slack included)
    q: np.ndarray    # MVar net injection per bus
    v: np.ndarray    # p.u. voltage magnitude per bus
    q_c: np.ndarray  # MVar setpoint per controllable device


def violation_rate(v: np.ndarray, lim: VoltageLimits) -> float:
    """Negated sum of per-bus limit exceedances in p.u. (zero when clean)."""
    v = np.asarray(v, float)
    over = np.maximum(v - lim.v_max, 0.0)
    under = np.maximum(lim.v_min - v, 0.0)
    return float(-(over + under).sum())


class VvcEnv:
    """Steps the accurate model through a scenario under device actions."""

    def __init__(self, net: Network, devices: list[DeviceSpec], scn: ScenarioSet,
                 limits: VoltageLimits | None = None, c_v: float = 50.0):
        self.net = net
        self.devices = devices
        self.scn = scn
        self.limits = limits or VoltageLimits()
        self.c_v = c_v
        self.box = scn_mod.device_action_box(devices)
        idx = net.bus_index()
        self.dev_bus = np.array([idx[d.bus] for d in devices])
        self.dev_cap = np.array([d.s_mva for d in devices])
        self.day = 0
        self.step_idx = 0
        self.q_c = np.zeros(len(devices))
        self._state: State | None = None

    @property
    def n_dev(self) -> int:
        return len(self.devices)

    @property
    def feature_dim(self) -> int:
        return 3 * self.net.n_bus + self.n_dev

    def reset(self, day: int = 0, q_c: np.ndarray | None = None) -> State:
        self.day = day
        self.step_idx = 0
        self.q_c = np.zeros(self.n_dev) if q_c is None else np.asarray(q_c, float).copy()
        self._state = self._solve_state(day, 0, self.q_c)
        return self._state

    def observe(self) -> State:
        """State at the current position (exogenous data + carried setpoints)."""
        if self._state is None:
            raise RuntimeError("call reset() first")
        return self._state

    def step(self, q_c: np.ndarray) -> tuple[RewardBreakdown, State, bool]:
        """Apply device setpoints, collect the reward, advance one step."""
        q_c = np.asarray(q_c, float)
        if np.any(q_c < self.box.a_low - BOX_SLACK) or np.any(q_c > self.box.a_high + BOX_SLACK):
            raise ValueError("action outside device boxes; map it through actionspace first")

        day, t = self.day, self.step_idx
        done = t == self.scn.steps_per_day - 1
        last = self.scn.flat_index(day, t) == self.scn.n_steps - 1
        nxt_day, nxt_t = (day + 1, 0) if done else (day, t + 1)

        # one batched solve: column 0 prices the action now, column 1 is
        # the next observation under the new setpoints
        p_now, q_now = self._injections(day, t, q_c)
        if last:
            p_all, q_all = p_now[:, None], q_now[:, None]
        else:
            p_nx, q_nx = self._injections(nxt_day, nxt_t, q_c)
            p_all = np.stack([p_now, p_nx], axis=1)
            q_all = np.stack([q_now, q_nx], axis=1)
        res = solve_power_flow_batch(self.net, p_all, q_all)
        if not np.all(res["converged"]):
            raise PowerFlowError(
                f"power flow failed at day {day} step {t} "
                f"(mismatch {res['mismatch'].max():.3e} p.u.)")

        rb = self._reward(float(res["loss"][0]), res["v"][:, 0])
        ncol = 0 if last else 1
        self._state = State(p=res["p_inj"][:, ncol], q=res["q_inj"][:, ncol],
                            v=res["v"][:, ncol], q_c=q_c.copy())
        self.q_c = q_c.copy()
        if not last:
            self.day, self.step_idx = nxt_day, nxt_t
        return rb, self._state, done

    def evaluate_action(self, day: int, t: int, q_c: np.ndarray) -> RewardBreakdown:
        """Reward of an action at a given step, without advancing the env."""
        p, q = self._injections(day, t, np.asarray(q_c, float))
        res = solve_power_flow_batch(self.net, p[:, None], q[:, None])
        if not res["converged"][0]:
            raise PowerFlowError(f"power flow failed at day {day} step {t}")
        return self._reward(float(res["loss"][0]), res["v"][:, 0])

    def featurize(self, state: State) -> np.ndarray:
        """Normalized observation vector: O(1) features for the learner."""
        base = self.net.base_mva
        return np.concatenate([
            state.p / base,
            state.q / base,
            (state.v - 1.0) * 10.0,
            state.q_c / self.dev_cap,
        ])

    def _injections(self, day, t, q_c):
        p, q = scn_mod.exogenous_injections(self.net, self.devices, self.scn, day, t)
        np.add.at(q, self.dev_bus, q_c)
        return p, q

    def _solve_state(self, day, t, q_c) -> State:
        p, q = self._injections(day, t, q_c)
        res = solve_power_flow_batch(self.net, p[:, None], q[:, None])
        if not res["converged"][0]:
            raise PowerFlowError(f"power flow failed at day {day} step {t}")
        return State(p=res["p_inj"][:, 0], q=res["q_inj"][:, 0],
                     v=res["v"][:, 0], q_c=np.asarray(q_c, float).copy())

    def _reward(self, loss_mw: float, v: np.ndarray) -> RewardBreakdown:
        r_p = -loss_mw
        r_v = violation_rate(v, self.limits)
        return RewardBreakdown(r_p=r_p, r_v=r_v, r=r_p + self.c_v * r_v, c_v=self.c_v)
