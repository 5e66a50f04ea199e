"""
Decoupling of a network into regions along its tie lines.

Every tie branch is cut in the middle. Each half keeps half of the series
impedance and ends in an auxiliary bus carrying an auxiliary generator,
whose injection stands for the power arriving from the other region. The
cut is exact once the two copies agree, which the consensus rows express:

- AC tie: |V_m| = |V_n|, angle_m = angle_n, P_m = -P_n, Q_m = -Q_n
- DC tie: V_m = V_n, P_m = -P_n

Voltage rows carry the coefficients (+1, -1) and power rows (+1, +1), so
that ``sum_k A_k x_k = 0`` at consensus. The charging of a cut line stays
at its surviving endpoints as a bus shunt.
"""

import logging
from enum import Enum
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np
from scipy import optimize, sparse

from .helper.exception import ConsensusError, PartitionError
from .network import (
    REF_VOLTAGE,
    Branch,
    Bus,
    BusKind,
    Generator,
    Network,
    ac_islands,
    dc_islands,
    region_buses,
)
from .nlp.problem import NlpProblem
from .opf.model import OpfModel
from .opf.solution import OpfSolution, objective_value

logger = logging.getLogger(__name__)

AUX_V_MIN = 0.5
AUX_V_MAX = 1.5
AUX_BOUND_MARGIN = 1.1


class CouplingKind(str, Enum):
    VMAG = "Vmag"
    VANG = "Vang"
    VDC = "Vdc"
    PGEN = "Pgen"
    QGEN = "Qgen"


VOLTAGE_KINDS = (CouplingKind.VMAG, CouplingKind.VANG, CouplingKind.VDC)


class TieCut(NamedTuple):
    branch: int
    kind: BusKind
    region_a: str
    region_b: str
    aux_a: int
    aux_b: int
    # generator index inside the regional networks
    gen_a: int
    gen_b: int
    rows: Tuple[int, ...]


class CouplingConstraint(NamedTuple):
    """
    One consensus row ``x_a[col_a] + coef_b * x_b[col_b] = 0``. `tag` and
    `position` locate the value inside the messages exchanged for the tie.
    """

    row: int
    tie: int
    kind: CouplingKind
    bus_kind: BusKind
    region_a: str
    region_b: str
    col_a: int
    col_b: int
    coef_b: float
    position: int

    @property
    def is_voltage(self) -> bool:
        return self.kind in VOLTAGE_KINDS

    @property
    def tag(self) -> str:
        return "V" if self.is_voltage else "S"

    @property
    def label(self) -> str:
        return "{} {}".format(self.bus_kind.value, self.kind.value)


class Gauge(NamedTuple):
    """A variable fixed locally; follows the target of `row` when set"""

    row: Optional[int]
    default: float


class RegionalProblem(NamedTuple):
    """
    rows: global consensus rows touching the region
    cols, coefs: the single nonzero of A_k on each of those rows
    gauges: variable index -> Gauge
    gen_origin, conv_origin: index in the original network, None for
        auxiliary equipment
    """

    region: str
    network: Network
    model: OpfModel
    rows: np.ndarray
    cols: np.ndarray
    coefs: np.ndarray
    gauges: Dict[int, Gauge]
    gen_origin: Tuple[Optional[int], ...]
    conv_origin: Tuple[int, ...]

    @property
    def A(self) -> sparse.csr_matrix:
        k = len(self.rows)
        return sparse.csr_matrix(
            (self.coefs, (np.arange(k), self.cols)), shape=(k, self.model.vars.n)
        )

    @property
    def boundary(self) -> List[int]:
        return sorted(set(int(c) for c in self.cols))

    def gauge_values(self, z: Optional[np.ndarray] = None) -> Dict[int, float]:
        out = {}
        for var, gauge in self.gauges.items():
            if gauge.row is not None and z is not None:
                out[var] = float(z[gauge.row])
            else:
                out[var] = gauge.default
        return out

    def problem(
        self, z: Optional[np.ndarray] = None, x0: Optional[np.ndarray] = None
    ) -> NlpProblem:
        """Regional OPF with gauges set from the local consensus targets z"""
        return self.model.problem(
            x0=x0,
            gauges=self.gauge_values(z),
            name="region:{}".format(self.region),
        )


class Partition(NamedTuple):
    network: Network
    regions: Dict[str, RegionalProblem]
    ties: List[TieCut]
    constraints: List[CouplingConstraint]

    @property
    def dimension(self) -> int:
        return len(self.constraints)

    def neighbours(self, region: str) -> List[str]:
        out = []
        for t in self.ties:
            for own, other in ((t.region_a, t.region_b), (t.region_b, t.region_a)):
                if own == region and other not in out:
                    out.append(other)
        return out

    def residual(self, xs: Dict[str, np.ndarray]) -> np.ndarray:
        """sum_k A_k x_k"""
        r = np.zeros(self.dimension)
        for name, rp in self.regions.items():
            r[rp.rows] += rp.coefs * xs[name][rp.cols]
        return r


def _aux_bound(net: Network, region_load: float) -> float:
    return AUX_BOUND_MARGIN * max(region_load, net.total_load(), 1.0)


def partition(net: Network) -> Partition:
    """
    Cut all tie branches of a region-tagged network.

    Raises
    ------
    PartitionError
        untagged bus, empty region or converter between two regions
    InfeasibleError
        a region with load but no generator at all
    """
    buses = net.bus_map()
    for b in net.buses:
        if b.region is None:
            raise PartitionError("bus {} has no region tag", b.id)
    names = net.region_ids()
    groups = region_buses(net)
    for name in names:
        if not groups.get(name):
            raise PartitionError("region '{}' has no buses", name)
    for i, c in enumerate(net.converters):
        if buses[c.ac_bus].region != buses[c.dc_bus].region:
            raise PartitionError("converter {} joins two regions", i)

    ties = net.tie_branches()
    next_id = max(b.id for b in net.buses) + 1
    aux_buses: Dict[str, List[Bus]] = {r: [] for r in names}
    halves: Dict[str, List[Branch]] = {r: [] for r in names}
    aux_gens: Dict[str, List[Generator]] = {r: [] for r in names}
    charging: Dict[int, float] = {}
    local_gens = {
        r: [g for g in net.generators if buses[g.bus].region == r] for r in names
    }
    loads = {r: net.total_load(groups[r]) for r in names}
    pending = []

    for i in ties:
        br = net.branches[i]
        ends = (buses[br.from_bus], buses[br.to_bus])
        kind = ends[0].kind
        aux = (next_id, next_id + 1)
        next_id += 2
        gens = []
        for bus, aux_id in zip(ends, aux):
            region = bus.region
            aux_buses[region].append(
                Bus(aux_id, kind, AUX_V_MIN, AUX_V_MAX, region=region)
            )
            halves[region].append(Branch(bus.id, aux_id, br.r / 2, br.x / 2, 0.0))
            if br.b:
                charging[bus.id] = charging.get(bus.id, 0.0) + br.b / 2
            bound = _aux_bound(net, loads[region])
            gens.append(len(local_gens[region]) + len(aux_gens[region]))
            aux_gens[region].append(
                Generator(aux_id, -bound, bound, -bound, bound, 0.0, True)
            )
        pending.append((i, kind, ends[0].region, ends[1].region, aux, gens))

    regional: Dict[str, Tuple[Network, OpfModel, tuple, tuple]] = {}
    for r in names:
        own = [
            b._replace(b_shunt=b.b_shunt + charging.get(b.id, 0.0))
            for b in net.buses
            if b.region == r
        ]
        inside = set(groups[r])
        convs = [
            (i, c) for i, c in enumerate(net.converters) if c.ac_bus in inside
        ]
        sub = Network(
            buses=tuple(own + aux_buses[r]),
            branches=tuple(
                br
                for br in net.branches
                if br.from_bus in inside and br.to_bus in inside
            )
            + tuple(halves[r]),
            generators=tuple(local_gens[r] + aux_gens[r]),
            converters=tuple(c for _, c in convs),
            base_mva=net.base_mva,
            a_q=net.a_q,
            name="{}:{}".format(net.name or "network", r),
            regions=(r,),
        ).validate(require_refs=False)
        model = OpfModel(sub)
        model.check_structure()
        gen_origin = tuple(
            i for i, g in enumerate(net.generators) if buses[g.bus].region == r
        ) + (None,) * len(aux_gens[r])
        regional[r] = (sub, model, gen_origin, tuple(i for i, _ in convs))

    constraints: List[CouplingConstraint] = []
    cuts: List[TieCut] = []
    for t, (i, kind, ra, rb, aux, gens) in enumerate(pending):
        ma, mb = regional[ra][1], regional[rb][1]
        va, vb = ma.vars, mb.vars
        pa, pb = va.pg.start + gens[0], vb.pg.start + gens[1]
        if kind == BusKind.AC:
            ia, ib = ma.ac_index[aux[0]], mb.ac_index[aux[1]]
            qa, qb = va.qg.start + gens[0], vb.qg.start + gens[1]
            layout = [
                (CouplingKind.VMAG, va.vm.start + ia, vb.vm.start + ib, -1.0, 0),
                (CouplingKind.VANG, va.va.start + ia, vb.va.start + ib, -1.0, 1),
                (CouplingKind.PGEN, pa, pb, 1.0, 0),
                (CouplingKind.QGEN, qa, qb, 1.0, 1),
            ]
        else:
            ia, ib = ma.dc_index[aux[0]], mb.dc_index[aux[1]]
            layout = [
                (CouplingKind.VDC, va.vdc.start + ia, vb.vdc.start + ib, -1.0, 0),
                (CouplingKind.PGEN, pa, pb, 1.0, 0),
            ]
        rows = []
        for ck, col_a, col_b, coef_b, position in layout:
            rows.append(len(constraints))
            constraints.append(
                CouplingConstraint(
                    row=len(constraints),
                    tie=t,
                    kind=ck,
                    bus_kind=kind,
                    region_a=ra,
                    region_b=rb,
                    col_a=col_a,
                    col_b=col_b,
                    coef_b=coef_b,
                    position=position,
                )
            )
        cuts.append(
            TieCut(i, kind, ra, rb, aux[0], aux[1], gens[0], gens[1], tuple(rows))
        )

    problems: Dict[str, RegionalProblem] = {}
    for r in names:
        sub, model, gen_origin, conv_origin = regional[r]
        rows, cols, coefs = [], [], []
        for c in constraints:
            if c.region_a == r:
                rows.append(c.row)
                cols.append(c.col_a)
                coefs.append(1.0)
            elif c.region_b == r:
                rows.append(c.row)
                cols.append(c.col_b)
                coefs.append(c.coef_b)
        local = {row: j for j, row in enumerate(rows)}
        problems[r] = RegionalProblem(
            region=r,
            network=sub,
            model=model,
            rows=np.array(rows, dtype=int),
            cols=np.array(cols, dtype=int),
            coefs=np.array(coefs, dtype=float),
            gauges=_gauges(sub, model, cuts, constraints, local),
            gen_origin=gen_origin,
            conv_origin=conv_origin,
        )

    part = Partition(net, problems, cuts, constraints)
    logger.info(
        "partitioned '%s' into %d regions, %d ties, %d consensus rows",
        net.name or "network",
        len(names),
        len(cuts),
        len(constraints),
    )
    return part


def _gauges(
    sub: Network,
    model: OpfModel,
    cuts: List[TieCut],
    constraints: List[CouplingConstraint],
    local: Dict[int, int],
) -> Dict[int, Gauge]:
    """
    Islands of a regional network that lost their reference bus get one
    auxiliary bus fixed: its angle on the AC side, its voltage on the DC
    side. The fixed value follows the consensus target of that bus.
    """
    m = model.vars
    buses = sub.bus_map()
    voltage_row: Dict[int, int] = {}
    for cut in cuts:
        for c in (constraints[row] for row in cut.rows):
            if c.kind not in (CouplingKind.VANG, CouplingKind.VDC):
                continue
            for aux in (cut.aux_a, cut.aux_b):
                if aux in buses and c.row in local:
                    voltage_row[aux] = local[c.row]

    gauges: Dict[int, Gauge] = {}
    checks = (
        (ac_islands(sub), model.ac_index, m.va.start, 0.0),
        (dc_islands(sub), model.dc_index, m.vdc.start, REF_VOLTAGE),
    )
    for islands, index, start, default in checks:
        for island in islands:
            if any(buses[i].is_ref for i in island):
                continue
            candidates = sorted(i for i in island if i in voltage_row)
            if candidates:
                bus = candidates[0]
                gauges[start + index[bus]] = Gauge(voltage_row[bus], default)
            else:
                gauges[start + index[min(island)]] = Gauge(None, default)
    return gauges


def reconstruct(
    part: Partition, sols: Dict[str, OpfSolution], tol: Optional[float] = None
) -> OpfSolution:
    """
    Merge regional solutions into a solution of the original network.
    Auxiliary equipment is dropped.

    Raises
    ------
    ConsensusError
        when `tol` is given and a consensus row is violated by more
    """
    xs = {r: sols[r].to_vector(rp.model) for r, rp in part.regions.items()}
    res = part.residual(xs)
    if tol is not None and len(res):
        j = int(np.argmax(np.abs(res)))
        if abs(res[j]) > tol:
            c = part.constraints[j]
            raise ConsensusError(
                j,
                "consensus row {} ({} of tie branch {}) mismatch {:.3e} exceeds {:.3e}",
                j,
                c.label,
                part.ties[c.tie].branch,
                abs(res[j]),
                tol,
            )

    net = part.network
    ac, dc = net.ac_buses(), net.dc_buses()
    va, vm = np.zeros(len(ac)), np.zeros(len(ac))
    vdc = np.zeros(len(dc))
    with_lam = all(s.lam_p is not None for s in sols.values())
    lam_p, lam_q, lam_dc = np.zeros(len(ac)), np.zeros(len(ac)), np.zeros(len(dc))
    for i, b in enumerate(ac):
        rp, s = part.regions[b.region], sols[b.region]
        k = rp.model.ac_index[b.id]
        va[i], vm[i] = s.va[k], s.vm[k]
        if with_lam:
            lam_p[i], lam_q[i] = s.lam_p[k], s.lam_q[k]
    for i, b in enumerate(dc):
        rp, s = part.regions[b.region], sols[b.region]
        k = rp.model.dc_index[b.id]
        vdc[i] = s.vdc[k]
        if with_lam:
            lam_dc[i] = s.lam_dc[k]

    ng, nc = len(net.generators), len(net.converters)
    pg, qg, pc, qc = np.zeros(ng), np.zeros(ng), np.zeros(nc), np.zeros(nc)
    for r, rp in part.regions.items():
        s = sols[r]
        for k, origin in enumerate(rp.gen_origin):
            if origin is not None:
                pg[origin], qg[origin] = s.pg[k], s.qg[k]
        for k, origin in enumerate(rp.conv_origin):
            pc[origin], qc[origin] = s.pc[k], s.qc[k]

    merged = OpfSolution(
        network=net,
        va=va,
        vm=vm,
        vdc=vdc,
        pg=pg,
        qg=qg,
        pc=pc,
        qc=qc,
        objective=0.0,
        status="converged",
        iterations=max((s.iterations for s in sols.values()), default=0),
        lam_p=lam_p if with_lam else None,
        lam_q=lam_q if with_lam else None,
        lam_dc=lam_dc if with_lam else None,
    )
    return merged._replace(objective=objective_value(net, merged))


def _midpoints(part: Partition, central: OpfSolution):
    """Voltage and auxiliary injection at both cut ends of every tie"""
    net = part.network
    ac = {b.id: i for i, b in enumerate(net.ac_buses())}
    dc = {b.id: i for i, b in enumerate(net.dc_buses())}
    V = central.voltages()
    voltage: Dict[int, complex] = {}
    power: Dict[int, complex] = {}
    for cut in part.ties:
        br = net.branches[cut.branch]
        if cut.kind == BusKind.AC:
            vf, vt = V[ac[br.from_bus]], V[ac[br.to_bus]]
            current = (vf - vt) / br.impedance
        else:
            vf, vt = central.vdc[dc[br.from_bus]], central.vdc[dc[br.to_bus]]
            current = (vf - vt) / br.r
        mid = 0.5 * (vf + vt)
        voltage[cut.aux_a] = voltage[cut.aux_b] = mid
        power[cut.aux_a] = -mid * np.conj(current)
        power[cut.aux_b] = mid * np.conj(current)
    return voltage, power


def split_solution(part: Partition, central: OpfSolution) -> Dict[str, OpfSolution]:
    """
    Regional images of a solution of the original network. Auxiliary
    buses take the midpoint voltage of their tie and auxiliary generators
    the power crossing the cut, so every consensus row holds exactly.
    """
    net = part.network
    ac = {b.id: i for i, b in enumerate(net.ac_buses())}
    dc = {b.id: i for i, b in enumerate(net.dc_buses())}
    voltage, power = _midpoints(part, central)
    out = {}
    for r, rp in part.regions.items():
        sub = rp.network
        sub_ac, sub_dc = sub.ac_buses(), sub.dc_buses()
        va, vm = np.zeros(len(sub_ac)), np.zeros(len(sub_ac))
        for k, b in enumerate(sub_ac):
            if b.id in ac:
                va[k] = central.va[ac[b.id]]
                vm[k] = central.vm[ac[b.id]]
            else:
                va[k], vm[k] = np.angle(voltage[b.id]), abs(voltage[b.id])
        vdc = np.array(
            [
                central.vdc[dc[b.id]] if b.id in dc else voltage[b.id].real
                for b in sub_dc
            ],
            dtype=float,
        )
        ng = len(sub.generators)
        pg, qg = np.zeros(ng), np.zeros(ng)
        for k, (g, origin) in enumerate(zip(sub.generators, rp.gen_origin)):
            if origin is not None:
                pg[k], qg[k] = central.pg[origin], central.qg[origin]
            else:
                s = complex(power[g.bus])
                pg[k] = s.real
                qg[k] = s.imag if g.bus in {b.id for b in sub_ac} else 0.0
        pc = np.array([central.pc[o] for o in rp.conv_origin], dtype=float)
        qc = np.array([central.qc[o] for o in rp.conv_origin], dtype=float)
        sol = OpfSolution(
            network=sub,
            va=va,
            vm=vm,
            vdc=vdc,
            pg=pg,
            qg=qg,
            pc=pc,
            qc=qc,
            objective=0.0,
            status=central.status,
        )
        out[r] = sol._replace(objective=objective_value(sub, sol))
    return out


def _stationarity_columns(
    rp: RegionalProblem, x: np.ndarray, active_tol: float
) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Gradient columns of the regional constraints at `x`, except the
    coupling rows, with sign bounds on their multipliers: equalities and
    fixed variables are free, active inequalities and upper bounds take
    mu >= 0, active lower bounds mu <= 0.
    """
    model = rp.model
    n = len(x)
    columns, lb, ub = [], [], []

    _, G = model.equalities(x)
    columns.append(G.toarray().T)
    lb.append(np.full(G.shape[0], -np.inf))
    ub.append(np.full(G.shape[0], np.inf))

    h, H = model.inequalities(x)
    active = h >= -active_tol * np.maximum(1.0, model.s_rated ** 2)
    columns.append(H.toarray()[active].T)
    lb.append(np.zeros(int(active.sum())))
    ub.append(np.full(int(active.sum()), np.inf))

    lo, hi = model.lower, model.upper
    scale = active_tol * np.maximum(1.0, np.abs(x))
    fixed = np.isfinite(lo) & (lo == hi)
    fixed[list(rp.gauges)] = True
    at_hi = ~fixed & np.isfinite(hi) & (hi - x <= scale)
    at_lo = ~fixed & np.isfinite(lo) & (x - lo <= scale)
    eye = np.eye(n)
    for mask, low, high in (
        (fixed, -np.inf, np.inf),
        (at_hi, 0.0, np.inf),
        (at_lo, -np.inf, 0.0),
    ):
        columns.append(eye[:, mask])
        lb.append(np.full(int(mask.sum()), low))
        ub.append(np.full(int(mask.sum()), high))
    return np.hstack(columns), np.concatenate(lb), np.concatenate(ub)


def consensus_multipliers(
    part: Partition, xs: Dict[str, np.ndarray], active_tol: float = 1e-6
) -> Dict[str, np.ndarray]:
    """
    Multipliers of the coupling rows at a consensus point `xs`, from the
    stationarity of every regional Lagrangian.

    All regions are solved together as one bounded least-squares problem in
    which each coupling row has a single multiplier shared by both of its
    regions. Inequality and bound multipliers keep their KKT signs, so a
    KKT point of the original network yields multipliers under which it is
    also a KKT point of every regional problem.
    """
    if not part.regions:
        return {}
    blocks, rhs, lbs, ubs = [], [], [], []
    for r, rp in part.regions.items():
        x = xs[r]
        _, df = rp.model.objective(x)
        K, lb, ub = _stationarity_columns(rp, x, active_tol)
        blocks.append(K)
        rhs.append(-df)
        lbs.append(lb)
        ubs.append(ub)
    local = sparse.block_diag(blocks, format="csr")
    coupling = []
    for r, rp in part.regions.items():
        coupling.append(
            sparse.csr_matrix(
                (rp.coefs, (rp.cols, rp.rows)),
                shape=(rp.model.vars.n, part.dimension),
            )
        )
    K = sparse.hstack([local, sparse.vstack(coupling)], format="csr").toarray()
    lb = np.concatenate(lbs + [np.full(part.dimension, -np.inf)])
    ub = np.concatenate(ubs + [np.full(part.dimension, np.inf)])
    fit = optimize.lsq_linear(K, np.concatenate(rhs), bounds=(lb, ub), method="bvls")
    lam = fit.x[K.shape[1] - part.dimension :]
    logger.debug(
        "coupling multipliers: stationarity residual %.3e (%s)",
        float(np.max(np.abs(fit.fun), initial=0.0)),
        fit.message,
    )
    return {r: lam[rp.rows].copy() for r, rp in part.regions.items()}


def partition_report(part: Partition) -> dict:
    regions = {}
    for r, rp in part.regions.items():
        sub = rp.network
        aux = sum(1 for g in sub.generators if g.is_auxiliary)
        regions[r] = {
            "buses": len(sub.buses) - aux,
            "auxiliary_buses": aux,
            "branches": len(sub.branches),
            "generators": len(sub.generators) - aux,
            "converters": len(sub.converters),
            "consensus_rows": len(rp.rows),
            "neighbours": part.neighbours(r),
        }
    return {
        "network": part.network.name,
        "regions": regions,
        "ac_ties": sum(1 for t in part.ties if t.kind == BusKind.AC),
        "dc_ties": sum(1 for t in part.ties if t.kind == BusKind.DC),
        "consensus_dimension": part.dimension,
        "ties": [
            {
                "branch": t.branch,
                "kind": t.kind.value,
                "from_region": t.region_a,
                "to_region": t.region_b,
                "auxiliary_buses": [t.aux_a, t.aux_b],
            }
            for t in part.ties
        ],
    }
