"""Radial distribution network model and balanced AC power flow.

The solver is a backward/forward sweep specialised to radial feeders,
written in matrix form: a branch-to-downstream-bus incidence matrix plays
the backward sweep (current aggregation) and its impedance-weighted
transpose plays the forward sweep (voltage drops from the slack).  All
quantities are per-unit internally; the public surface speaks MW / MVar /
ohm.
"""

from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

MISMATCH_TOL = 1e-8   # p.u. apparent power, per bus
MAX_ITERATIONS = 200
DEFAULT_BASE_MVA = 10.0


class NetworkError(ValueError):
    """Raised for malformed, non-radial or otherwise invalid network data."""


class PowerFlowError(RuntimeError):
    """Raised when a result is requested from a non-converged solution."""


@dataclass(frozen=True)
class Bus:
    id: int
    load_p: float   # MW
    load_q: float   # MVar


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float        # ohm
    x: float        # ohm


@dataclass(frozen=True)
class Network:
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    slack_bus: int
    base_mva: float
    base_kv: float

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    def bus_index(self) -> dict[int, int]:
        """Map bus id -> position in the buses tuple."""
        return {b.id: i for i, b in enumerate(self.buses)}

    def base_load(self) -> tuple[np.ndarray, np.ndarray]:
        """Base-case (load_p, load_q) in MW/MVar, ordered as buses."""
        p = np.array([b.load_p for b in self.buses])
        q = np.array([b.load_q for b in self.buses])
        return p, q


@dataclass
class Injections:
    """Net bus power injections in MW/MVar, ordered as Network.buses.

    The slack entry is ignored by the solver (the slack bus balances the
    network); keep it at zero by convention.
    """
    p: np.ndarray
    q: np.ndarray


@dataclass
class PowerFlowSolution:
    v: np.ndarray        # p.u. voltage magnitude per bus
    p_inj: np.ndarray    # MW net injection per bus, slack included
    q_inj: np.ndarray    # MVar net injection per bus
    loss: float          # MW, equals sum of p_inj
    converged: bool
    iterations: int
    mismatch: float      # worst per-bus apparent-power mismatch, p.u.


def load_network(path) -> Network:
    """Load and validate a network case file (JSON schema, strict)."""
    try:
        with open(path) as fh:
            obj = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise NetworkError(f"cannot read network file {path}: {exc}") from exc
    return network_from_dict(obj)


def network_from_dict(obj) -> Network:
    if not isinstance(obj, dict):
        raise NetworkError("network file must contain a JSON object")
    required = {"base_mva", "base_kv", "slack_bus", "buses", "branches", "devices"}
    _check_keys(obj, required, "network")

    buses = []
    seen = set()
    for entry in obj["buses"]:
        _check_keys(entry, {"id", "load_p_mw", "load_q_mvar"}, "bus")
        bid = int(entry["id"])
        if bid in seen:
            raise NetworkError(f"duplicate bus id {bid}")
        seen.add(bid)
        p, q = float(entry["load_p_mw"]), float(entry["load_q_mvar"])
        if not (math.isfinite(p) and math.isfinite(q)):
            raise NetworkError(f"non-finite load at bus {bid}")
        buses.append(Bus(bid, p, q))

    branches = []
    for entry in obj["branches"]:
        _check_keys(entry, {"from", "to", "r_ohm", "x_ohm"}, "branch")
        f, t = int(entry["from"]), int(entry["to"])
        r, x = float(entry["r_ohm"]), float(entry["x_ohm"])
        if f == t:
            raise NetworkError(f"branch {f}-{t} connects a bus to itself")
        if f not in seen or t not in seen:
            raise NetworkError(f"branch {f}-{t} references an unknown bus")
        if r < 0 or x < 0 or not (math.isfinite(r) and math.isfinite(x)):
            raise NetworkError(f"branch {f}-{t} has invalid impedance")
        branches.append(Branch(f, t, r, x))

    slack = int(obj["slack_bus"])
    if slack not in seen:
        raise NetworkError(f"slack bus {slack} is not in the bus list")

    validate_devices(obj["devices"], seen)

    net = Network(
        buses=tuple(buses),
        branches=tuple(branches),
        slack_bus=slack,
        base_mva=float(obj["base_mva"]),
        base_kv=float(obj["base_kv"]),
    )
    _check_radial(net)
    return net


def validate_devices(entries, bus_ids) -> None:
    """Schema check for the devices section; fields depend on device kind."""
    if not isinstance(entries, list):
        raise NetworkError("devices must be a list")
    for entry in entries:
        kind = entry.get("kind") if isinstance(entry, dict) else None
        if kind == "iber":
            _check_keys(entry, {"kind", "bus", "s_mva", "p_max_mw"}, "iber device")
            if float(entry["s_mva"]) < float(entry["p_max_mw"]):
                raise NetworkError("iber apparent-power rating below its active limit")
        elif kind == "svc":
            _check_keys(entry, {"kind", "bus", "s_mva", "q_min_mvar", "q_max_mvar"}, "svc device")
            if float(entry["q_min_mvar"]) > float(entry["q_max_mvar"]):
                raise NetworkError("svc q_min above q_max")
        else:
            raise NetworkError(f"unknown device kind {kind!r}")
        if int(entry["bus"]) not in bus_ids:
            raise NetworkError(f"device references unknown bus {entry['bus']}")


def _check_keys(entry, required, what) -> None:
    if not isinstance(entry, dict):
        raise NetworkError(f"{what} entry must be an object")
    keys = set(entry)
    if keys != required:
        missing, extra = required - keys, keys - required
        parts = []
        if missing:
            parts.append(f"missing {sorted(missing)}")
        if extra:
            parts.append(f"unknown {sorted(extra)}")
        raise NetworkError(f"{what} entry: " + ", ".join(parts))


def _check_radial(net: Network) -> None:
    n = net.n_bus
    if len(net.branches) != n - 1:
        raise NetworkError(
            f"not radial: {len(net.branches)} branches for {n} buses "
            f"(a tree needs {n - 1})")
    # connectivity by union-find; together with the branch count this
    # guarantees a single tree
    idx = net.bus_index()
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for br in net.branches:
        a, b = find(idx[br.from_bus]), find(idx[br.to_bus])
        if a == b:
            raise NetworkError(f"loop detected at branch {br.from_bus}-{br.to_bus}")
        parent[a] = b
    if len({find(i) for i in range(n)}) != 1:
        raise NetworkError("network graph is disconnected")


def case_path(name: str):
    """Path to a bundled case file, e.g. case_path('case33')."""
    return resources.files("vvclab.cases").joinpath(f"{name}.json")


def load_case(name: str) -> Network:
    return load_network(case_path(name))


def scale_impedances(net: Network, factor: float) -> Network:
    """Network with every branch r and x multiplied by factor.

    This is how the deliberately inaccurate grid model is built: same
    topology and loads, scaled series impedances.
    """
    if not factor > 0:
        raise ValueError(f"impedance factor must be positive, got {factor}")
    branches = tuple(
        Branch(b.from_bus, b.to_bus, b.r * factor, b.x * factor)
        for b in net.branches
    )
    return Network(net.buses, branches, net.slack_bus, net.base_mva, net.base_kv)


class _RadialSolver:
    """Precomputed backward/forward sweep machinery for one network.

    Buses are re-ordered so the slack sits first.  `down[e, j]` is 1 when
    non-slack bus j lies downstream of branch e, so `down @ I_node` is the
    backward sweep (branch current aggregation) and `(Z*down).T @ I_branch`
    the forward sweep (cumulative voltage drop below the slack).
    """

    def __init__(self, net: Network):
        n = net.n_bus
        idx = net.bus_index()
        slack = idx[net.slack_bus]

        adj: list[list[tuple[int, int]]] = [[] for _ in range(n)]
        for e, br in enumerate(net.branches):
            f, t = idx[br.from_bus], idx[br.to_bus]
            adj[f].append((t, e))
            adj[t].append((f, e))

        # BFS from the slack orients every branch parent -> child
        order = [slack]
        parent_edge = [-1] * n
        seen = [False] * n
        seen[slack] = True
        head = 0
        while head < len(order):
            u = order[head]
            head += 1
            for v, e in adj[u]:
                if not seen[v]:
                    seen[v] = True
                    parent_edge[v] = e
                    order.append(v)

        z_base = net.base_kv ** 2 / net.base_mva
        z_pu = np.array([(br.r + 1j * br.x) / z_base for br in net.branches])

        nb = n - 1
        down = np.zeros((nb, nb))
        for j, b in enumerate(order[1:]):
            u = b
            while u != slack:
                e = parent_edge[u]
                down[e, j] = 1.0
                br = net.branches[e]
                u = idx[br.from_bus] if idx[br.to_bus] == u else idx[br.to_bus]

        self.net = net
        self.n = n
        self.order = np.array(order)               # bfs position -> bus position
        pos = np.empty(n, dtype=int)
        pos[self.order] = np.arange(n)             # bus position -> bfs position
        self.pos = pos
        self.down = down
        self.zdown_t = np.ascontiguousarray((z_pu[:, None] * down).T)
        self.z_pu = z_pu
        self.r_pu = z_pu.real
        f_idx = np.array([idx[br.from_bus] for br in net.branches])
        t_idx = np.array([idx[br.to_bus] for br in net.branches])
        self.f_bfs = pos[f_idx]
        self.t_bfs = pos[t_idx]
        # signed bus/branch incidence (bfs order): net current leaving a
        # bus is inc @ branch currents
        inc = np.zeros((n, len(net.branches)))
        inc[self.f_bfs, np.arange(len(net.branches))] = 1.0
        inc[self.t_bfs, np.arange(len(net.branches))] = -1.0
        self.inc = inc

    def solve_batch(self, p_mw: np.ndarray, q_mvar: np.ndarray) -> dict:
        """Sweep iterations on a batch of injection columns.

        p_mw, q_mvar: (n_bus, batch) in physical units ordered as
        Network.buses (slack entries ignored).
        """
        base = self.net.base_mva
        s_spec = (p_mw + 1j * q_mvar) / base
        s_bfs = s_spec[self.order][1:]                 # (n-1, batch), bfs order
        batch = s_bfs.shape[1]

        v = np.ones_like(s_bfs, dtype=complex)         # non-slack voltages
        mismatch = np.full(batch, np.inf)
        iterations = 0
        for iterations in range(1, MAX_ITERATIONS + 1):
            # backward sweep: branch current (slack -> leaves direction)
            # aggregates the downstream demand currents
            i_node = np.conj(s_bfs / v)
            i_branch = self.down @ (-i_node)
            v = 1.0 - self.zdown_t @ i_branch          # forward sweep
            if not np.all(np.isfinite(v)):
                mismatch = np.full(batch, np.inf)
                break
            mismatch = self._power_mismatch(v, s_bfs)
            if np.all(mismatch < MISMATCH_TOL):
                break
            vm = np.abs(v)
            if vm.max() > 4.0 or vm.min() < 1e-3:
                break   # diverging; report as voltage collapse

        v_full = self._with_slack(v)
        i_edge = (v_full[self.f_bfs] - v_full[self.t_bfs]) / self.z_pu[:, None]
        s_impl = self._implied_injections(v_full, i_edge)
        vm_orig = np.abs(v_full)[self.pos, :]
        s_orig = s_impl[self.pos, :]
        return {
            "v": vm_orig,
            "p_inj": s_orig.real * base,
            "q_inj": s_orig.imag * base,
            "loss": s_orig.real.sum(axis=0) * base,
            "converged": mismatch < MISMATCH_TOL,
            "iterations": iterations,
            "mismatch": mismatch,
            "branch_loss": (np.abs(i_edge) ** 2 * self.r_pu[:, None]).sum(axis=0) * base,
        }

    def _power_mismatch(self, v_ns, s_bfs):
        """Worst per-bus apparent-power imbalance of candidate voltages."""
        v_full = self._with_slack(v_ns)
        i_edge = (v_full[self.f_bfs] - v_full[self.t_bfs]) / self.z_pu[:, None]
        s_impl = self._implied_injections(v_full, i_edge)
        return np.abs(s_impl[1:] - s_bfs).max(axis=0)

    def _with_slack(self, v_ns: np.ndarray) -> np.ndarray:
        v_full = np.empty((self.n, v_ns.shape[1]), dtype=complex)
        v_full[0] = 1.0
        v_full[1:] = v_ns
        return v_full

    def _implied_injections(self, v_full, i_edge):
        """Net complex injection per bus (bfs order) implied by voltages."""
        return v_full * np.conj(self.inc @ i_edge)


@functools.lru_cache(maxsize=16)
def _solver_for(net: Network) -> _RadialSolver:
    return _RadialSolver(net)


def solve_power_flow(net: Network, inj: Injections) -> PowerFlowSolution:
    """Solve the balanced power flow for one injection vector."""
    p = np.asarray(inj.p, dtype=float)
    q = np.asarray(inj.q, dtype=float)
    if p.shape != (net.n_bus,) or q.shape != (net.n_bus,):
        raise ValueError("injection vectors must have one entry per bus")
    if not (np.all(np.isfinite(p)) and np.all(np.isfinite(q))):
        raise ValueError("injections must be finite")
    res = _solver_for(net).solve_batch(p[:, None], q[:, None])
    return PowerFlowSolution(
        v=res["v"][:, 0],
        p_inj=res["p_inj"][:, 0],
        q_inj=res["q_inj"][:, 0],
        loss=float(res["loss"][0]),
        converged=bool(res["converged"][0]),
        iterations=int(res["iterations"]),
        mismatch=float(res["mismatch"][0]),
    )


def solve_power_flow_batch(net: Network, p_mw: np.ndarray, q_mvar: np.ndarray) -> dict:
    """Batched solve: p_mw/q_mvar are (n_bus, batch). Returns raw arrays.

    Used by the dispatch optimizer, which evaluates many candidate
    injection vectors per iteration.
    """
    return _solver_for(net).solve_batch(np.asarray(p_mw, float), np.asarray(q_mvar, float))


def total_loss(sol: PowerFlowSolution) -> float:
    """Total active loss in MW (sum of net bus injections)."""
    if not sol.converged:
        raise PowerFlowError(
            f"power flow did not converge (last mismatch {sol.mismatch:.3e} p.u.)")
    return sol.loss
