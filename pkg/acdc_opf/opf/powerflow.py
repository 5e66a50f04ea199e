"""
Newton-Raphson AC power flow in polar coordinates.

Reference buses are slack buses, buses with a non-auxiliary generator are
PV buses and the rest are PQ buses. Converter injections are held at their
set points, so the DC side is not solved.
"""

import logging
from typing import NamedTuple

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from ..admittance import build_ac_admittance
from ..network import Network
from .power import bus_injection, dSbus_dV
from .solution import OpfSolution

logger = logging.getLogger(__name__)


class PowerFlowResult(NamedTuple):
    """
    V: complex AC bus voltages; p, q: computed net injections per AC bus
    (generation minus load, per-unit)
    """

    V: np.ndarray
    p: np.ndarray
    q: np.ndarray
    converged: bool
    iterations: int
    mismatch: float


def newton_power_flow(
    net: Network, setpoints: OpfSolution, tol: float = 1e-10, max_iter: int = 20
) -> PowerFlowResult:
    """
    Solve the AC power flow with active generation, PV magnitudes and
    converter injections taken from `setpoints`. Slack generation and PV
    reactive generation follow from the result.
    """
    buses = net.ac_buses()
    index = {b.id: i for i, b in enumerate(buses)}
    n = len(buses)
    Y = build_ac_admittance(net)

    sched = -np.array([complex(b.p_load, b.q_load) for b in buses])
    pv = np.zeros(n, dtype=bool)
    for g, p, q in zip(net.generators, setpoints.pg, setpoints.qg):
        if g.bus in index:
            sched[index[g.bus]] += complex(p, q)
            if not g.is_auxiliary:
                pv[index[g.bus]] = True
    for c, p, q in zip(net.converters, setpoints.pc, setpoints.qc):
        sched[index[c.ac_bus]] += complex(p, q)
    slack = np.array([b.is_ref for b in buses])
    pv &= ~slack
    pq = ~(slack | pv)

    va = setpoints.va.copy()
    vm = setpoints.vm.copy()
    vm[pq] = np.where(vm[pq] > 0, vm[pq], 1.0)
    ang = np.flatnonzero(~slack)
    mag = np.flatnonzero(pq)
    rows = np.concatenate([ang, n + mag])

    def mismatch(V):
        S = bus_injection(Y, V) - sched
        return np.concatenate([S.real[ang], S.imag[mag]])

    V = vm * np.exp(1j * va)
    F = mismatch(V)
    norm = float(np.max(np.abs(F), initial=0.0))
    it = 0
    while norm > tol and it < max_iter:
        it += 1
        dS_dVa, dS_dVm = dSbus_dV(Y, V)
        full = sparse.vstack(
            [
                sparse.hstack([dS_dVa.real, dS_dVm.real]),
                sparse.hstack([dS_dVa.imag, dS_dVm.imag]),
            ],
            format="csr",
        )
        J = full[rows][:, rows].tocsc()
        dx = splinalg.spsolve(J, -F)
        va[ang] += dx[: len(ang)]
        vm[mag] += dx[len(ang) :]
        V = vm * np.exp(1j * va)
        F = mismatch(V)
        norm = float(np.max(np.abs(F), initial=0.0))
        logger.debug("power flow it %d mismatch %.3e", it, norm)

    S = bus_injection(Y, V)
    return PowerFlowResult(
        V=V,
        p=S.real,
        q=S.imag,
        converged=bool(norm <= tol),
        iterations=it,
        mismatch=norm,
    )
