"""
Domain types for hybrid AC-DC networks.

All electrical quantities stored here are per-unit on `Network.base_mva`;
conversion from MW / Mvar / MVA happens when a case file is parsed.
Generator cost coefficients stay in €/MWh and the reactive cost coefficient
in €/h per Mvar², so objective values come out in €/h.
"""

import logging
from enum import Enum
from typing import Dict, Iterable, List, NamedTuple, Optional, Sequence, Set, Tuple

import networkx as nx

from .helper.exception import CaseSemanticError

logger = logging.getLogger(__name__)

# Loss model of a voltage-source converter: 1.1 % of rating at no load and
# 1.85 % at full load, P_CL = c0 + c2 * S^2
NO_LOAD_LOSS = 0.011
FULL_LOAD_LOSS = 0.0185

# voltage magnitude held at every reference bus
REF_VOLTAGE = 1.0


class BusKind(str, Enum):
    AC = "AC"
    DC = "DC"


class Bus(NamedTuple):
    id: int
    kind: BusKind
    v_min: float
    v_max: float
    is_ref: bool = False
    region: Optional[str] = None
    p_load: float = 0.0
    q_load: float = 0.0
    g_shunt: float = 0.0
    b_shunt: float = 0.0


class Branch(NamedTuple):
    """
    pi-model line. AC branches use r + jx and total charging b; DC branches
    only use r.
    """

    from_bus: int
    to_bus: int
    r: float
    x: float = 0.0
    b: float = 0.0

    @property
    def impedance(self) -> complex:
        return complex(self.r, self.x)


class Generator(NamedTuple):
    bus: int
    p_min: float
    p_max: float
    q_min: float
    q_max: float
    b_g: float
    is_auxiliary: bool = False


class Converter(NamedTuple):
    """Voltage-source converter. Positive active power flows from DC to AC."""

    ac_bus: int
    dc_bus: int
    s_rated: float
    loss_c0: float
    loss_c2: float

    def loss(self, p: float, q: float) -> float:
        return self.loss_c0 + self.loss_c2 * (p * p + q * q)


def default_loss_coefficients(s_rated: float) -> Tuple[float, float]:
    c0 = NO_LOAD_LOSS * s_rated
    c2 = (FULL_LOAD_LOSS - NO_LOAD_LOSS) / s_rated
    return c0, c2


class Network(NamedTuple):
    buses: Tuple[Bus, ...]
    branches: Tuple[Branch, ...] = ()
    generators: Tuple[Generator, ...] = ()
    converters: Tuple[Converter, ...] = ()
    base_mva: float = 100.0
    a_q: float = 0.001
    name: str = ""
    regions: Tuple[str, ...] = ()

    def bus_map(self) -> Dict[int, Bus]:
        return {b.id: b for b in self.buses}

    def ac_buses(self) -> List[Bus]:
        return [b for b in self.buses if b.kind == BusKind.AC]

    def dc_buses(self) -> List[Bus]:
        return [b for b in self.buses if b.kind == BusKind.DC]

    def branch_kind(self, branch: Branch) -> BusKind:
        return self.bus_map()[branch.from_bus].kind

    def is_tie(self, branch: Branch) -> bool:
        buses = self.bus_map()
        return buses[branch.from_bus].region != buses[branch.to_bus].region

    def tie_branches(self) -> List[int]:
        return [i for i, br in enumerate(self.branches) if self.is_tie(br)]

    def region_ids(self) -> List[str]:
        if self.regions:
            return list(self.regions)
        seen: Dict[str, None] = {}
        for b in self.buses:
            if b.region is not None:
                seen.setdefault(b.region, None)
        return list(seen)

    def total_load(self, bus_ids: Optional[Iterable[int]] = None) -> float:
        """Sum of apparent load in per-unit"""
        keep = None if bus_ids is None else set(bus_ids)
        return sum(
            abs(complex(b.p_load, b.q_load))
            for b in self.buses
            if keep is None or b.id in keep
        )

    def restrict(self, bus_ids: Iterable[int]) -> "Network":
        """Sub-network induced by a set of buses."""
        keep = set(bus_ids)
        return self._replace(
            buses=tuple(b for b in self.buses if b.id in keep),
            branches=tuple(
                br
                for br in self.branches
                if br.from_bus in keep and br.to_bus in keep
            ),
            generators=tuple(g for g in self.generators if g.bus in keep),
            converters=tuple(
                c for c in self.converters if c.ac_bus in keep and c.dc_bus in keep
            ),
            regions=(),
        )

    def validate(self, require_refs: bool = True) -> "Network":
        """
        Check the structural invariants of the network

        Parameters
        ----------
        require_refs : bool
            Demand exactly one reference bus per AC island and per DC island,
            and a connected network. Regional networks produced by
            partitioning are checked with ``require_refs=False``.

        Returns
        -------
        Network
            The network itself, to allow chaining

        Raises
        ------
        CaseSemanticError
            On the first violated invariant
        """
        buses: Dict[int, Bus] = {}
        for b in self.buses:
            if b.id in buses:
                raise CaseSemanticError("duplicate bus id {}", b.id)
            if not 0 < b.v_min <= b.v_max:
                raise CaseSemanticError(
                    "bus {}: voltage bounds must satisfy 0 < vmin <= vmax", b.id
                )
            if b.is_ref and not b.v_min <= REF_VOLTAGE <= b.v_max:
                raise CaseSemanticError(
                    "reference bus {} cannot hold {} pu", b.id, REF_VOLTAGE
                )
            if b.kind == BusKind.DC and (b.q_load or b.b_shunt or b.g_shunt):
                raise CaseSemanticError(
                    "DC bus {} carries reactive load or shunt elements", b.id
                )
            buses[b.id] = b
        if self.regions:
            for b in self.buses:
                if b.region is not None and b.region not in self.regions:
                    raise CaseSemanticError(
                        "bus {} uses undeclared region '{}'", b.id, b.region
                    )

        for i, br in enumerate(self.branches):
            for end in (br.from_bus, br.to_bus):
                if end not in buses:
                    raise CaseSemanticError("branch {}: unknown bus {}", i, end)
            if br.from_bus == br.to_bus:
                raise CaseSemanticError("branch {} is a self loop", i)
            kind = buses[br.from_bus].kind
            if kind != buses[br.to_bus].kind:
                raise CaseSemanticError("branch {} joins an AC and a DC bus", i)
            if kind == BusKind.DC and (br.x or br.b):
                raise CaseSemanticError("DC branch {} has reactance or charging", i)
            if abs(br.impedance) <= 0.0:
                raise CaseSemanticError("branch {} has zero series impedance", i)

        for i, g in enumerate(self.generators):
            if g.bus not in buses:
                raise CaseSemanticError("generator {}: unknown bus {}", i, g.bus)
            if buses[g.bus].kind == BusKind.DC and not g.is_auxiliary:
                raise CaseSemanticError("generator {} sits on DC bus {}", i, g.bus)
            if g.p_min > g.p_max or g.q_min > g.q_max:
                raise CaseSemanticError("generator {} has inverted limits", i)

        for i, c in enumerate(self.converters):
            for end in (c.ac_bus, c.dc_bus):
                if end not in buses:
                    raise CaseSemanticError("converter {}: unknown bus {}", i, end)
            ac_kind, dc_kind = buses[c.ac_bus].kind, buses[c.dc_bus].kind
            if ac_kind != BusKind.AC or dc_kind != BusKind.DC:
                raise CaseSemanticError(
                    "converter {} must join an AC bus to a DC bus", i
                )
            if c.s_rated <= 0 or c.loss_c0 < 0 or c.loss_c2 < 0:
                raise CaseSemanticError(
                    "converter {}: rating must be positive and losses non-negative", i
                )

        if require_refs:
            checks = ((BusKind.AC, ac_islands(self)), (BusKind.DC, dc_islands(self)))
            for kind, islands in checks:
                for island in islands:
                    refs = [i for i in sorted(island) if buses[i].is_ref]
                    if len(refs) != 1:
                        raise CaseSemanticError(
                            "{} island of bus {} has {} reference buses, expected 1",
                            kind.value,
                            min(island),
                            len(refs),
                        )
            if self.buses and not nx.is_connected(network_graph(self)):
                raise CaseSemanticError("network is not connected")
        return self


def network_graph(net: Network) -> nx.MultiGraph:
    """All buses, joined by branches and converters"""
    graph = nx.MultiGraph()
    graph.add_nodes_from(b.id for b in net.buses)
    graph.add_edges_from((br.from_bus, br.to_bus) for br in net.branches)
    graph.add_edges_from((c.ac_bus, c.dc_bus) for c in net.converters)
    return graph


def _islands(net: Network, kind: BusKind) -> List[Set[int]]:
    graph = nx.Graph()
    ids = [b.id for b in net.buses if b.kind == kind]
    graph.add_nodes_from(ids)
    kinds = {b.id: b.kind for b in net.buses}
    graph.add_edges_from(
        (br.from_bus, br.to_bus)
        for br in net.branches
        if kinds.get(br.from_bus) == kind and kinds.get(br.to_bus) == kind
    )
    # sorted by smallest bus id for reproducible downstream choices
    return sorted((set(c) for c in nx.connected_components(graph)), key=min)


def ac_islands(net: Network) -> List[Set[int]]:
    return _islands(net, BusKind.AC)


def dc_islands(net: Network) -> List[Set[int]]:
    return _islands(net, BusKind.DC)


def region_buses(net: Network) -> Dict[str, List[int]]:
    out: Dict[str, List[int]] = {r: [] for r in net.region_ids()}
    for b in net.buses:
        if b.region is not None:
            out.setdefault(b.region, []).append(b.id)
    return out


def bus_index(buses: Sequence[Bus]) -> Dict[int, int]:
    return {b.id: i for i, b in enumerate(buses)}
