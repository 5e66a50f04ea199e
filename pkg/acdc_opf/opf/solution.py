"""
OPF results expressed in network quantities, and audits that only look at
the network and the set points (never at the solver's callbacks).
"""

import math
from typing import Dict, List, NamedTuple, Optional

import numpy as np

from ..network import BusKind, Converter, Network
from ..nlp.problem import KktResiduals, NlpSolution
from .model import OpfModel


class OpfSolution(NamedTuple):
    """
    Per-unit set points of one network. Bus arrays follow
    `network.ac_buses()` / `network.dc_buses()`, device arrays follow
    `network.generators` / `network.converters`. Balance multipliers are in
    €/h per pu.
    """

    network: Network
    va: np.ndarray
    vm: np.ndarray
    vdc: np.ndarray
    pg: np.ndarray
    qg: np.ndarray
    pc: np.ndarray
    qc: np.ndarray
    objective: float
    status: str = "converged"
    kkt: Optional[KktResiduals] = None
    iterations: int = 0
    lam_p: Optional[np.ndarray] = None
    lam_q: Optional[np.ndarray] = None
    lam_dc: Optional[np.ndarray] = None

    @property
    def ac_ids(self) -> List[int]:
        return [b.id for b in self.network.ac_buses()]

    @property
    def dc_ids(self) -> List[int]:
        return [b.id for b in self.network.dc_buses()]

    def voltages(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)

    def converter_losses(self) -> np.ndarray:
        return np.array(
            [
                converter_loss(c, p, q)
                for c, p, q in zip(self.network.converters, self.pc, self.qc)
            ],
            dtype=float,
        )

    def to_vector(self, model: OpfModel) -> np.ndarray:
        m = model.vars
        x = m.zeros()
        x[m.va], x[m.vm], x[m.vdc] = self.va, self.vm, self.vdc
        x[m.pg], x[m.qg] = self.pg, self.qg
        x[m.pc], x[m.qc] = self.pc, self.qc
        return x

    def to_json(self) -> dict:
        net = self.network
        base = net.base_mva
        ac = {b.id: i for i, b in enumerate(net.ac_buses())}
        dc = {b.id: i for i, b in enumerate(net.dc_buses())}
        buses = []
        for b in net.buses:
            if b.kind == BusKind.AC:
                i = ac[b.id]
                rec = {
                    "id": b.id,
                    "kind": b.kind.value,
                    "vm": float(self.vm[i]),
                    "va": math.degrees(self.va[i]),
                }
                if self.lam_p is not None:
                    rec["lam_p"] = float(self.lam_p[i]) / base
                    rec["lam_q"] = float(self.lam_q[i]) / base
            else:
                i = dc[b.id]
                rec = {"id": b.id, "kind": b.kind.value, "vdc": float(self.vdc[i])}
                if self.lam_dc is not None:
                    rec["lam_p"] = float(self.lam_dc[i]) / base
            buses.append(rec)
        losses = self.converter_losses()
        return {
            "objective": self.objective,
            "status": self.status,
            "iterations": self.iterations,
            "kkt": None if self.kkt is None else self.kkt._asdict(),
            "buses": buses,
            "generators": [
                {
                    "index": i,
                    "bus": g.bus,
                    "pg": base * float(self.pg[i]),
                    "qg": base * float(self.qg[i]),
                }
                for i, g in enumerate(net.generators)
            ],
            "converters": [
                {
                    "index": i,
                    "ac_bus": c.ac_bus,
                    "dc_bus": c.dc_bus,
                    "pc": base * float(self.pc[i]),
                    "qc": base * float(self.qc[i]),
                    "loss": base * float(losses[i]),
                }
                for i, c in enumerate(net.converters)
            ],
        }


def interpret(model: OpfModel, sol: NlpSolution) -> OpfSolution:
    m = model.vars
    x = sol.x
    nac, ndc = m.nac, m.ndc
    lam = sol.lam
    return OpfSolution(
        network=model.net,
        va=x[m.va].copy(),
        vm=x[m.vm].copy(),
        vdc=x[m.vdc].copy(),
        pg=x[m.pg].copy(),
        qg=x[m.qg].copy(),
        pc=x[m.pc].copy(),
        qc=x[m.qc].copy(),
        objective=model.cost(x),
        status=sol.status.value,
        kkt=sol.kkt,
        iterations=sol.iterations,
        lam_p=lam[:nac].copy(),
        lam_q=lam[nac : 2 * nac].copy(),
        lam_dc=lam[2 * nac : 2 * nac + ndc].copy(),
    )


def converter_loss(conv: Converter, p: float, q: float) -> float:
    """P_CL = c0 + c2 (P^2 + Q^2), per-unit"""
    return conv.loss(p, q)


def objective_value(net: Network, sol: OpfSolution) -> float:
    """Objective in €/h recomputed from the dispatch"""
    base = net.base_mva
    kinds = {b.id: b.kind for b in net.buses}
    total = 0.0
    for g, p, q in zip(net.generators, sol.pg, sol.qg):
        total += base * g.b_g * p
        if kinds[g.bus] == BusKind.AC and not g.is_auxiliary:
            total += net.a_q * base ** 2 * q * q
    for q in sol.qc:
        total += net.a_q * base ** 2 * q * q
    return float(total)


class BranchFlow(NamedTuple):
    """Power leaving each end of a branch, per-unit"""

    s_from: complex
    s_to: complex


def branch_flows(net: Network, sol: OpfSolution) -> List[BranchFlow]:
    ac = {b.id: i for i, b in enumerate(net.ac_buses())}
    dc = {b.id: i for i, b in enumerate(net.dc_buses())}
    V = sol.voltages()
    flows = []
    for br in net.branches:
        if br.from_bus in ac:
            vf, vt = V[ac[br.from_bus]], V[ac[br.to_bus]]
            ys = 1.0 / br.impedance
            ysh = 0.5j * br.b
            s_from = vf * np.conj((vf - vt) * ys + vf * ysh)
            s_to = vt * np.conj((vt - vf) * ys + vt * ysh)
        else:
            vf, vt = sol.vdc[dc[br.from_bus]], sol.vdc[dc[br.to_bus]]
            s_from = complex(vf * (vf - vt) / br.r)
            s_to = complex(vt * (vt - vf) / br.r)
        flows.append(BranchFlow(complex(s_from), complex(s_to)))
    return flows


class BalanceResidual(NamedTuple):
    p: np.ndarray
    q: np.ndarray
    dc: np.ndarray

    def max(self) -> float:
        return max(
            (float(np.max(np.abs(a))) for a in self if len(a)), default=0.0
        )


def evaluate_balance(net: Network, sol: OpfSolution) -> BalanceResidual:
    """
    Power leaving each bus through branches, shunts, loads and converters
    minus generation, per-unit. Zero at a feasible point.
    """
    ac = {b.id: i for i, b in enumerate(net.ac_buses())}
    dc = {b.id: i for i, b in enumerate(net.dc_buses())}
    s = np.zeros(len(ac), dtype=complex)
    pdc = np.zeros(len(dc))
    V = sol.voltages()

    for br, flow in zip(net.branches, branch_flows(net, sol)):
        if br.from_bus in ac:
            s[ac[br.from_bus]] += flow.s_from
            s[ac[br.to_bus]] += flow.s_to
        else:
            pdc[dc[br.from_bus]] += flow.s_from.real
            pdc[dc[br.to_bus]] += flow.s_to.real
    for b in net.buses:
        if b.kind == BusKind.AC:
            i = ac[b.id]
            s[i] += abs(V[i]) ** 2 * complex(b.g_shunt, -b.b_shunt)
            s[i] += complex(b.p_load, b.q_load)
        else:
            pdc[dc[b.id]] += b.p_load
    for g, p, q in zip(net.generators, sol.pg, sol.qg):
        if g.bus in ac:
            s[ac[g.bus]] -= complex(p, q)
        else:
            pdc[dc[g.bus]] -= p
    for c, p, q in zip(net.converters, sol.pc, sol.qc):
        s[ac[c.ac_bus]] -= complex(p, q)
        pdc[dc[c.dc_bus]] += p + converter_loss(c, p, q)
    return BalanceResidual(s.real, s.imag, pdc)


class TieFlow(NamedTuple):
    """Flows in MW / Mvar leaving each end of a tie branch"""

    branch: int
    from_region: str
    to_region: str
    p_from: float
    q_from: float
    p_to: float
    q_to: float


def tie_flows(net: Network, sol: OpfSolution) -> List[TieFlow]:
    base = net.base_mva
    buses = net.bus_map()
    flows = branch_flows(net, sol)
    out = []
    for i in net.tie_branches():
        br, flow = net.branches[i], flows[i]
        out.append(
            TieFlow(
                branch=i,
                from_region=buses[br.from_bus].region,
                to_region=buses[br.to_bus].region,
                p_from=base * flow.s_from.real,
                q_from=base * flow.s_from.imag,
                p_to=base * flow.s_to.real,
                q_to=base * flow.s_to.imag,
            )
        )
    return out


def net_interchange(flows: List[TieFlow]) -> Dict[str, float]:
    """Active power exported by each region over its ties, MW"""
    out: Dict[str, float] = {}
    for f in flows:
        out[f.from_region] = out.get(f.from_region, 0.0) + f.p_from
        out[f.to_region] = out.get(f.to_region, 0.0) + f.p_to
    return out


class RegionBalance(NamedTuple):
    """MW totals of one region; network_loss closes the balance"""

    generation: float
    load: float
    converter_loss: float
    export: float
    network_loss: float


def region_balance(net: Network, sol: OpfSolution) -> Dict[str, RegionBalance]:
    base = net.base_mva
    buses = net.bus_map()
    export = net_interchange(tie_flows(net, sol))
    out = {}
    for region in net.region_ids():
        gen = sum(
            p
            for g, p in zip(net.generators, sol.pg)
            if buses[g.bus].region == region and not g.is_auxiliary
        )
        load = sum(b.p_load for b in net.buses if b.region == region)
        closs = sum(
            converter_loss(c, p, q)
            for c, p, q in zip(net.converters, sol.pc, sol.qc)
            if buses[c.ac_bus].region == region
        )
        gen, load, closs = base * gen, base * load, base * closs
        exp = export.get(region, 0.0)
        out[region] = RegionBalance(
            generation=gen,
            load=load,
            converter_loss=closs,
            export=exp,
            network_loss=gen - load - closs - exp,
        )
    return out


class SolutionComparison(NamedTuple):
    """Deviations of `other` from `reference`; powers in MW / Mvar"""

    gap: float
    pg: np.ndarray
    qg: np.ndarray
    pc: np.ndarray
    qc: np.ndarray
    vm: float

    def to_json(self) -> dict:
        def largest(a):
            return float(np.max(np.abs(a))) if len(a) else 0.0

        return {
            "gap": self.gap,
            "max_pg": largest(self.pg),
            "max_qg": largest(self.qg),
            "max_pc": largest(self.pc),
            "max_qc": largest(self.qc),
            "max_vm": self.vm,
        }


def optimality_gap(reference: float, other: float) -> float:
    if reference == 0.0:
        return other - reference
    return (other - reference) / abs(reference)


def compare_solutions(
    reference: OpfSolution, other: OpfSolution
) -> SolutionComparison:
    """Both solutions must describe the same network"""
    base = reference.network.base_mva
    dv = other.vm - reference.vm
    return SolutionComparison(
        gap=optimality_gap(reference.objective, other.objective),
        pg=base * (other.pg - reference.pg),
        qg=base * (other.qg - reference.qg),
        pc=base * (other.pc - reference.pc),
        qc=base * (other.qc - reference.qc),
        vm=float(np.max(np.abs(dv))) if len(dv) else 0.0,
    )
