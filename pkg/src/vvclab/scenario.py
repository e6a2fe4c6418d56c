"""Daily load and PV time series driving the experiments.

One scenario step is 15 minutes (96 steps/day).  Base loads are scaled by
a smooth daily curve peaking in the evening times independent multiplicative
uniform noise per bus per step; PV follows a solar arc peaking at noon with
the same noise treatment.  Everything is a pure function of the seed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .actionspace import ActionBox
from .gridflow import Network, NetworkError

STEPS_PER_DAY = 96
NOISE_LOW, NOISE_HIGH = 0.8, 1.2   # the 20% uniform fluctuation band


@dataclass(frozen=True)
class DeviceSpec:
    kind: str                 # "iber" or "svc"
    bus: int
    s_mva: float
    p_max: float = 0.0        # iber only: active-power rating driving PV output
    q_min: float = 0.0        # svc only
    q_max: float = 0.0        # svc only

    def __post_init__(self):
        if self.kind not in ("iber", "svc"):
            raise ValueError(f"unknown device kind {self.kind!r}")
        if self.kind == "iber":
            if self.s_mva < self.p_max or self.p_max < 0:
                raise ValueError("iber requires s_mva >= p_max >= 0")
        elif self.q_min > self.q_max:
            raise ValueError("svc requires q_min <= q_max")


@dataclass(frozen=True)
class ScenarioSet:
    days: int
    steps_per_day: int
    load_scale: np.ndarray    # (days*steps, n_bus) multipliers on base load
    pv_output: np.ndarray     # (days*steps, n_dev) MW; zero for svc columns
    seed: int

    @property
    def n_steps(self) -> int:
        return self.days * self.steps_per_day

    def flat_index(self, day: int, step: int) -> int:
        return day * self.steps_per_day + step


def load_devices(path) -> list[DeviceSpec]:
    """Read the devices section of a network case file."""
    with open(path) as fh:
        obj = json.load(fh)
    devices = []
    for entry in obj.get("devices", []):
        if entry["kind"] == "iber":
            devices.append(DeviceSpec(kind="iber", bus=int(entry["bus"]),
                                      s_mva=float(entry["s_mva"]),
                                      p_max=float(entry["p_max_mw"])))
        else:
            devices.append(DeviceSpec(kind="svc", bus=int(entry["bus"]),
                                      s_mva=float(entry["s_mva"]),
                                      q_min=float(entry["q_min_mvar"]),
                                      q_max=float(entry["q_max_mvar"])))
    return devices


def iber_q_range(spec: DeviceSpec) -> tuple[float, float]:
    """Symmetric reactive capability left by the active-power rating.

    The cap is sqrt(s^2 - p_max^2): the headroom of the inverter apparent
    power over the maximum active output, so the range never varies with
    the instantaneous PV production.
    """
    if spec.kind != "iber":
        raise ValueError("iber_q_range applies to iber devices only")
    q_cap = float(np.sqrt(spec.s_mva ** 2 - spec.p_max ** 2))
    return (-q_cap, q_cap)


def device_action_box(devices: list[DeviceSpec]) -> ActionBox:
    """Stack per-device reactive limits into one ActionBox."""
    lo, hi = [], []
    for d in devices:
        if d.kind == "iber":
            a, b = iber_q_range(d)
        else:
            a, b = d.q_min, d.q_max
        lo.append(a)
        hi.append(b)
    return ActionBox(a_low=np.array(lo), a_high=np.array(hi))


def load_curve(step: np.ndarray | int) -> np.ndarray:
    """Daily demand shape in [0.6, 1.0], peaking at step 76 (19:00)."""
    t = np.asarray(step, float)
    return 0.8 + 0.2 * np.sin(2 * np.pi * (t - 28.0) / STEPS_PER_DAY - np.pi / 2)


def pv_curve(step: np.ndarray | int) -> np.ndarray:
    """Solar arc in [0, 1], nonzero between steps 24 and 72, peak at noon."""
    t = np.asarray(step, float)
    return np.maximum(0.0, np.sin(np.pi * (t - 24.0) / 48.0))


def generate_profiles(net: Network, devices: list[DeviceSpec], days: int,
                      seed: int) -> ScenarioSet:
    """Build the exogenous scenario; deterministic in (net, devices, days, seed)."""
    if days < 1:
        raise ValueError("days must be >= 1")
    bus_ids = {b.id for b in net.buses}
    for d in devices:
        if d.bus not in bus_ids:
            raise NetworkError(f"device references unknown bus {d.bus}")

    rng = np.random.default_rng(seed)
    n_steps = days * STEPS_PER_DAY
    t = np.arange(n_steps) % STEPS_PER_DAY

    # one multiplier per bus per step, applied to both P and Q so the
    # base power factor is preserved
    load_noise = rng.uniform(NOISE_LOW, NOISE_HIGH, size=(n_steps, net.n_bus))
    load_scale = load_curve(t)[:, None] * load_noise

    pv = np.zeros((n_steps, len(devices)))
    arc = pv_curve(t)
    for j, d in enumerate(devices):
        if d.kind != "iber":
            continue
        noise = rng.uniform(NOISE_LOW, NOISE_HIGH, size=n_steps)
        pv[:, j] = np.clip(d.p_max * arc * noise, 0.0, d.p_max)

    return ScenarioSet(days=days, steps_per_day=STEPS_PER_DAY,
                       load_scale=load_scale, pv_output=pv, seed=seed)


def exogenous_injections(net: Network, devices: list[DeviceSpec],
                         scn: ScenarioSet, day: int, step: int
                         ) -> tuple[np.ndarray, np.ndarray]:
    """Uncontrollable net bus injections (MW, MVar) for one step.

    Loads enter negatively; PV active output enters positively at the
    device bus.  Device reactive output is *not* included here.
    """
    t = scn.flat_index(day, step)
    p0, q0 = net.base_load()
    mult = scn.load_scale[t]
    p = -p0 * mult
    q = -q0 * mult
    idx = net.bus_index()
    for j, d in enumerate(devices):
        p[idx[d.bus]] += scn.pv_output[t, j]
    return p, q


def save_scenario(scn: ScenarioSet, net: Network, devices: list[DeviceSpec],
                  path) -> None:
    """Persist as long-form CSV: day, step, bus_or_device_id, kind, value."""
    p0, q0 = net.base_load()
    with open(path, "w") as fh:
        fh.write(f"# days={scn.days} steps_per_day={scn.steps_per_day} seed={scn.seed}\n")
        fh.write("day,step,bus_or_device_id,kind,value\n")
        for t in range(scn.n_steps):
            day, step = divmod(t, scn.steps_per_day)
            for i, bus in enumerate(net.buses):
                if bus.load_p == 0 and bus.load_q == 0:
                    continue
                m = scn.load_scale[t, i]
                fh.write(f"{day},{step},{bus.id},load_p,{p0[i] * m:.9g}\n")
                fh.write(f"{day},{step},{bus.id},load_q,{q0[i] * m:.9g}\n")
            for j, d in enumerate(devices):
                if d.kind == "iber":
                    fh.write(f"{day},{step},{j},pv_p,{scn.pv_output[t, j]:.9g}\n")
