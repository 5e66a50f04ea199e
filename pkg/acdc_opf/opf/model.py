"""
AC-DC optimal power flow as a nonlinear program.

Objective (€/h)::

    sum_g bg * base * Pg + a_q * base^2 * (sum_{g not aux} Qg^2 + sum_c Qc^2)

Equalities, per unit:

- AC balance ``V * conj(Y V) - Cg (Pg + jQg) - Cc (Pc + jQc) + Sd = 0``
  split into real and imaginary rows,
- DC balance ``Vdc * (Ydc Vdc) - Cg Pg + Cc (Pc + c0 + c2 (Pc^2 + Qc^2)) + Pd = 0``,
- reference buses fixed through their bounds (angle 0 and magnitude 1.0 on
  the AC side, 1.0 on the DC side).

Inequalities: converter apparent power ``Pc^2 + Qc^2 - S^2 <= 0``; voltage
and generator limits are variable bounds.
"""

import logging
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy import sparse

from ..admittance import build_ac_admittance, build_dc_admittance
from ..helper.exception import InfeasibleError
from ..network import REF_VOLTAGE, Network, bus_index
from ..nlp.problem import NlpProblem
from .power import d2Sbus_dV2, dSbus_dV
from .variables import OpfVariableMap

logger = logging.getLogger(__name__)


def _incidence(rows: List[int], cols: List[int], shape) -> sparse.csr_matrix:
    index = (np.array(rows, dtype=int), np.array(cols, dtype=int))
    return sparse.csr_matrix((np.ones(len(rows)), index), shape=shape)


def _seed():
    return [np.zeros(0, dtype=int)], [np.zeros(0, dtype=int)], [np.zeros(0)]


def _hcat(blocks: List[sparse.spmatrix], nrows: int) -> sparse.csr_matrix:
    """Concatenate blocks side by side, zero-width blocks included"""
    rows, cols, vals = _seed()
    offset = 0
    for b in blocks:
        b = sparse.coo_matrix(b)
        rows.append(b.row)
        cols.append(b.col + offset)
        vals.append(b.data)
        offset += b.shape[1]
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(nrows, offset),
    )


def _place(
    blocks: List[Tuple[int, int, sparse.spmatrix]], n: int
) -> sparse.csr_matrix:
    """Sum blocks placed at (row, col) offsets into an n x n matrix"""
    rows, cols, vals = _seed()
    for r, c, b in blocks:
        b = sparse.coo_matrix(b)
        rows.append(b.row + r)
        cols.append(b.col + c)
        vals.append(b.data)
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    )


def _zeros(nrows: int, ncols: int) -> sparse.csr_matrix:
    return sparse.csr_matrix((nrows, ncols))


def _diag(v: np.ndarray) -> sparse.csr_matrix:
    if len(v) == 0:
        return _zeros(0, 0)
    return sparse.diags(v, format="csr")


def _vcat(blocks: List[sparse.spmatrix], ncols: int) -> sparse.csr_matrix:
    return _hcat([b.T for b in blocks], ncols).T.tocsr()


class OpfModel:
    """Callbacks and data of the OPF of one network"""

    def __init__(self, net: Network):
        self.net = net
        self.ac = net.ac_buses()
        self.dc = net.dc_buses()
        self.ac_index = bus_index(self.ac)
        self.dc_index = bus_index(self.dc)
        gens = net.generators
        convs = net.converters
        self.vars = OpfVariableMap.build(
            len(self.ac), len(self.dc), len(gens), len(convs)
        )
        nac, ndc, ng, nc = self.vars

        self.Y = build_ac_admittance(net)
        self.Ydc = build_dc_admittance(net)

        ac_gen = [i for i, g in enumerate(gens) if g.bus in self.ac_index]
        dc_gen = [i for i, g in enumerate(gens) if g.bus in self.dc_index]
        # bus x device incidence
        ac_rows = [self.ac_index[gens[i].bus] for i in ac_gen]
        dc_rows = [self.dc_index[gens[i].bus] for i in dc_gen]
        self.Cg_ac = _incidence(ac_rows, ac_gen, (nac, ng))
        self.Cg_dc = _incidence(dc_rows, dc_gen, (ndc, ng))
        conv_cols = list(range(nc))
        ac_rows = [self.ac_index[c.ac_bus] for c in convs]
        dc_rows = [self.dc_index[c.dc_bus] for c in convs]
        self.Cc_ac = _incidence(ac_rows, conv_cols, (nac, nc))
        self.Cc_dc = _incidence(dc_rows, conv_cols, (ndc, nc))

        self.pd = np.array([b.p_load for b in self.ac], dtype=float)
        self.qd = np.array([b.q_load for b in self.ac], dtype=float)
        self.pd_dc = np.array([b.p_load for b in self.dc], dtype=float)

        base = net.base_mva
        self.c1 = base * np.array([g.b_g for g in gens], dtype=float)
        self.cq = net.a_q * base ** 2
        is_ac = np.zeros(ng, dtype=bool)
        is_ac[ac_gen] = True
        self.qmask = np.array(
            [is_ac[i] and not g.is_auxiliary for i, g in enumerate(gens)], dtype=float
        )
        self.c0 = np.array([c.loss_c0 for c in convs], dtype=float)
        self.c2 = np.array([c.loss_c2 for c in convs], dtype=float)
        self.s_rated = np.array([c.s_rated for c in convs], dtype=float)
        self.lower, self.upper = self._bounds(is_ac)

    def _bounds(self, gen_is_ac: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        m = self.vars
        lo = np.full(m.n, -np.inf)
        hi = np.full(m.n, np.inf)
        for i, b in enumerate(self.ac):
            if b.is_ref:
                lo[m.va.start + i] = hi[m.va.start + i] = 0.0
                lo[m.vm.start + i] = hi[m.vm.start + i] = REF_VOLTAGE
            else:
                lo[m.vm.start + i], hi[m.vm.start + i] = b.v_min, b.v_max
        for i, b in enumerate(self.dc):
            if b.is_ref:
                lo[m.vdc.start + i] = hi[m.vdc.start + i] = REF_VOLTAGE
            else:
                lo[m.vdc.start + i], hi[m.vdc.start + i] = b.v_min, b.v_max
        for i, g in enumerate(self.net.generators):
            lo[m.pg.start + i], hi[m.pg.start + i] = g.p_min, g.p_max
            if gen_is_ac[i]:
                lo[m.qg.start + i], hi[m.qg.start + i] = g.q_min, g.q_max
            else:
                lo[m.qg.start + i] = hi[m.qg.start + i] = 0.0
        return lo, hi

    def check_structure(self) -> None:
        net = self.net
        if not net.generators and (net.total_load() > 0 or net.converters):
            raise InfeasibleError(
                "network '{}' has load or converter losses but no generator", net.name
            )

    def flat_start(self) -> np.ndarray:
        m = self.vars
        x = np.zeros(m.n)
        x[m.vm] = 1.0
        x[m.vdc] = 1.0
        box = np.isfinite(self.lower) & np.isfinite(self.upper)
        mid = np.zeros(m.n)
        mid[box] = 0.5 * (self.lower[box] + self.upper[box])
        x[m.pg] = mid[m.pg]
        x[m.qg] = mid[m.qg]
        return x

    def voltages(self, x: np.ndarray) -> np.ndarray:
        m = self.vars
        return x[m.vm] * np.exp(1j * x[m.va])

    # objective

    def cost(self, x: np.ndarray) -> float:
        m = self.vars
        qg, qc = x[m.qg], x[m.qc]
        return float(
            self.c1 @ x[m.pg] + self.cq * (self.qmask @ (qg * qg) + qc @ qc)
        )

    def objective(self, x: np.ndarray) -> Tuple[float, np.ndarray]:
        m = self.vars
        df = np.zeros(m.n)
        df[m.pg] = self.c1
        df[m.qg] = 2 * self.cq * self.qmask * x[m.qg]
        df[m.qc] = 2 * self.cq * x[m.qc]
        return self.cost(x), df

    # constraints

    def equalities(self, x: np.ndarray) -> Tuple[np.ndarray, sparse.csr_matrix]:
        m = self.vars
        nac, ndc, ng, nc = m
        pg, qg, pc, qc = x[m.pg], x[m.qg], x[m.pc], x[m.qc]

        if nac:
            V = self.voltages(x)
            mis = V * np.conj(self.Y @ V)
            mis -= self.Cg_ac @ (pg + 1j * qg) + self.Cc_ac @ (pc + 1j * qc)
            mis += self.pd + 1j * self.qd
            dS_dVa, dS_dVm = dSbus_dV(self.Y, V)
            Jp = _hcat(
                [
                    dS_dVa.real,
                    dS_dVm.real,
                    _zeros(nac, ndc),
                    -self.Cg_ac,
                    _zeros(nac, ng),
                    -self.Cc_ac,
                    _zeros(nac, nc),
                ],
                nac,
            )
            Jq = _hcat(
                [
                    dS_dVa.imag,
                    dS_dVm.imag,
                    _zeros(nac, ndc),
                    _zeros(nac, ng),
                    -self.Cg_ac,
                    _zeros(nac, nc),
                    -self.Cc_ac,
                ],
                nac,
            )
        else:
            mis = np.zeros(0, dtype=complex)
            Jp = Jq = _zeros(0, m.n)

        vdc = x[m.vdc]
        idc = self.Ydc @ vdc
        loss = self.c0 + self.c2 * (pc * pc + qc * qc)
        gdc = vdc * idc - self.Cg_dc @ pg + self.Cc_dc @ (pc + loss) + self.pd_dc
        if ndc:
            dV = _diag(idc) + _diag(vdc) @ self.Ydc
            Jd = _hcat(
                [
                    _zeros(ndc, nac),
                    _zeros(ndc, nac),
                    dV,
                    -self.Cg_dc,
                    _zeros(ndc, ng),
                    self.Cc_dc @ _diag(1 + 2 * self.c2 * pc),
                    self.Cc_dc @ _diag(2 * self.c2 * qc),
                ],
                ndc,
            )
        else:
            Jd = _zeros(0, m.n)

        g = np.concatenate([mis.real, mis.imag, gdc])
        J = _vcat([Jp, Jq, Jd], m.n)
        return g, J

    def inequalities(self, x: np.ndarray) -> Tuple[np.ndarray, sparse.csr_matrix]:
        m = self.vars
        pc, qc = x[m.pc], x[m.qc]
        h = pc * pc + qc * qc - self.s_rated ** 2
        nc = m.nc
        J = _hcat(
            [
                _zeros(nc, m.pc.start),
                _diag(2 * pc),
                _diag(2 * qc),
            ],
            nc,
        )
        return h, J

    def hessian(
        self, x: np.ndarray, lam: np.ndarray, mu: np.ndarray, cost_mult: float = 1.0
    ) -> sparse.csr_matrix:
        m = self.vars
        nac, ndc, ng, nc = m
        blocks = []
        qcost = 2 * self.cq * cost_mult
        blocks.append((m.qg.start, m.qg.start, _diag(qcost * self.qmask)))
        blocks.append((m.qc.start, m.qc.start, _diag(np.full(nc, qcost))))

        if nac:
            V = self.voltages(x)
            lam_p, lam_q = lam[:nac], lam[nac : 2 * nac]
            Gp = d2Sbus_dV2(self.Y, V, lam_p)
            Gq = d2Sbus_dV2(self.Y, V, lam_q)
            aa, av, va, vv = [
                sparse.csr_matrix(p.real + q.imag) for p, q in zip(Gp, Gq)
            ]
            blocks += [
                (m.va.start, m.va.start, aa),
                (m.va.start, m.vm.start, av),
                (m.vm.start, m.va.start, va),
                (m.vm.start, m.vm.start, vv),
            ]

        lam_dc = lam[2 * nac : 2 * nac + ndc]
        if ndc:
            dl = _diag(lam_dc) @ self.Ydc
            blocks.append((m.vdc.start, m.vdc.start, dl + dl.T))
        if nc:
            conv_lam = self.Cc_dc.T @ lam_dc if ndc else np.zeros(nc)
            curv = _diag(2 * self.c2 * conv_lam + 2 * mu[:nc])
            blocks.append((m.pc.start, m.pc.start, curv))
            blocks.append((m.qc.start, m.qc.start, curv))
        return _place(blocks, m.n)

    def problem(
        self,
        x0: Optional[np.ndarray] = None,
        gauges: Optional[Dict[int, float]] = None,
        name: Optional[str] = None,
    ) -> NlpProblem:
        """
        The OPF as an NlpProblem. `gauges` fixes extra variables, by index,
        to the given values.
        """
        lower, upper = self.lower.copy(), self.upper.copy()
        for i, value in (gauges or {}).items():
            lower[i] = upper[i] = value
        return NlpProblem(
            objective=self.objective,
            x0=self.flat_start() if x0 is None else np.asarray(x0, dtype=float),
            lower=lower,
            upper=upper,
            equalities=self.equalities,
            inequalities=self.inequalities,
            hessian=self.hessian,
            name=name or "opf:{}".format(self.net.name or "network"),
        )


def assemble(
    net: Network,
    scope: Optional[List[int]] = None,
    gauges: Optional[Dict[int, float]] = None,
) -> Tuple[NlpProblem, OpfVariableMap]:
    """
    Build the OPF of a network, or of the sub-network induced by the bus ids
    in `scope`.

    Raises
    ------
    InfeasibleError
        the scope has load but no generator
    """
    if scope is not None:
        net = net.restrict(scope)
    model = OpfModel(net)
    model.check_structure()
    return model.problem(gauges=gauges), model.vars
