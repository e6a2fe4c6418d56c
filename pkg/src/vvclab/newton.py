"""Newton-Raphson power flow on the bus admittance matrix.

Deliberately independent of the sweep solver in gridflow: full Ybus,
polar-coordinate Jacobian, dense linear solves.  Used as the physics
oracle the sweep solver is validated against.
"""

from __future__ import annotations

import functools

import numpy as np

from .gridflow import Injections, Network, PowerFlowSolution


@functools.lru_cache(maxsize=16)
def _ybus(net: Network) -> np.ndarray:
    idx = net.bus_index()
    n = net.n_bus
    z_base = net.base_kv ** 2 / net.base_mva
    y = np.zeros((n, n), dtype=complex)
    for br in net.branches:
        f, t = idx[br.from_bus], idx[br.to_bus]
        ye = 1.0 / ((br.r + 1j * br.x) / z_base)
        y[f, f] += ye
        y[t, t] += ye
        y[f, t] -= ye
        y[t, f] -= ye
    return y


def solve_newton(net: Network, inj: Injections, tol: float = 1e-10,
                 max_iter: int = 50) -> PowerFlowSolution:
    """Full Newton-Raphson solve; every non-slack bus is treated as PQ."""
    y = _ybus(net)
    n = net.n_bus
    slack = net.bus_index()[net.slack_bus]
    pq = np.array([i for i in range(n) if i != slack])

    s_spec = (np.asarray(inj.p, float) + 1j * np.asarray(inj.q, float)) / net.base_mva
    vm = np.ones(n)
    va = np.zeros(n)

    mismatch = np.inf
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        v = vm * np.exp(1j * va)
        ibus = y @ v
        s_calc = v * np.conj(ibus)
        f = np.r_[(s_calc - s_spec).real[pq], (s_calc - s_spec).imag[pq]]
        mismatch = np.abs(s_calc[pq] - s_spec[pq]).max()
        if mismatch < tol:
            converged = True
            break

        # dS/d(angle), dS/d(magnitude) in complex form
        dv = np.diag(v)
        dvn = np.diag(v / vm)
        di = np.diag(ibus)
        ds_dva = 1j * dv @ np.conj(di - y @ dv)
        ds_dvm = dv @ np.conj(y @ dvn) + np.conj(di) @ dvn

        j11 = ds_dva.real[np.ix_(pq, pq)]
        j12 = ds_dvm.real[np.ix_(pq, pq)]
        j21 = ds_dva.imag[np.ix_(pq, pq)]
        j22 = ds_dvm.imag[np.ix_(pq, pq)]
        jac = np.block([[j11, j12], [j21, j22]])
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            break
        m = len(pq)
        va[pq] += dx[:m]
        vm[pq] += dx[m:]
        if not np.all(np.isfinite(vm)) or vm.min() <= 0:
            break

    v = vm * np.exp(1j * va)
    s_calc = v * np.conj(y @ v)
    p_inj = s_calc.real * net.base_mva
    q_inj = s_calc.imag * net.base_mva
    return PowerFlowSolution(
        v=vm.copy(),
        p_inj=p_inj,
        q_inj=q_inj,
        loss=float(p_inj.sum()),
        converged=converged,
        iterations=it,
        mismatch=float(mismatch),
    )
