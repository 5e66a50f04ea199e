"""
Read and write case files.

A case file is a YAML document::

    version: 1              # mandatory, only version 1 is understood
    name: five_bus          # optional
    units: MW               # MW (default) or pu for power columns
    base_mva: 100
    a_q: 0.001              # €/h per Mvar^2
    regions: [A, B]         # optional, declares the region tags in use

    # id, kind, vmin, vmax, ref, region, pload, qload[, gs, bs]
    bus:
      - [1, AC, 0.9, 1.1, true, A, 0, 0]
    # from, to, r, x, b  (per-unit; x and b must be 0 on DC branches)
    branch:
      - [1, 2, 0.01, 0.1, 0.02]
    # bus, pmin, pmax, qmin, qmax, bg   (bg in €/MWh)
    gen:
      - [1, 0, 300, -100, 100, 50]
    # acbus, dcbus, srated[, c0, c2]   (c0, c2 per-unit, null for defaults)
    conv:
      - [2, 11, 100, null, null]

With ``units: MW`` loads, generator limits, shunts (MW / Mvar at 1 pu) and
converter ratings (MVA) are divided by ``base_mva`` while parsing. The
serializer always writes ``units: pu`` so a network reads back unchanged.
"""

import logging
import math
from typing import Any, Dict, Iterator, List, Optional, Sequence, Tuple

import fsspec
import yaml

from .helper.exception import CaseParseError, CaseSemanticError
from .network import (
    Branch,
    Bus,
    BusKind,
    Converter,
    Generator,
    Network,
    default_loss_coefficients,
)

logger = logging.getLogger(__name__)

SUPPORTED_VERSIONS = (1,)

BUS_COLUMNS = ("id", "kind", "vmin", "vmax", "ref", "region", "pload", "qload")
BUS_OPTIONAL = ("gs", "bs")
BRANCH_COLUMNS = ("from", "to", "r")
BRANCH_OPTIONAL = ("x", "b")
GEN_COLUMNS = ("bus", "pmin", "pmax", "qmin", "qmax", "bg")
CONV_COLUMNS = ("acbus", "dcbus", "srated")
CONV_OPTIONAL = ("c0", "c2")


class _Table:
    """Row access for one table of the document, with line numbers for errors"""

    def __init__(self, source: str, name: str, rows: Any, lines: List[int], line: int):
        self.source = source
        self.name = name
        self.line = line
        if rows is None:
            rows = []
        if not isinstance(rows, list):
            self.fail(line, None, "table must be a list of rows")
        self.data = rows
        self.lines = lines if len(lines) == len(rows) else [line] * len(rows)

    def fail(self, line: int, field: Optional[str], msg: str, *args):
        where = "{}:{}: {}".format(self.source, line, self.name)
        if field is not None:
            where += " field '{}'".format(field)
        raise CaseParseError(where + ": " + msg, *args)

    def rows(
        self, columns: Sequence[str], optional: Sequence[str] = ()
    ) -> Iterator[Tuple[int, Dict[str, Any]]]:
        low, high = len(columns), len(columns) + len(optional)
        for row, line in zip(self.data, self.lines):
            if not isinstance(row, list) or not low <= len(row) <= high:
                self.fail(
                    line,
                    None,
                    "expected a row of {} to {} columns ({}), got {!r}",
                    low,
                    high,
                    ", ".join(tuple(columns) + tuple(optional)),
                    row,
                )
            values = dict(zip(tuple(columns) + tuple(optional), row))
            yield line, values

    def number(self, line: int, values: Dict, field: str, default=None) -> float:
        value = values.get(field, default)
        if isinstance(value, bool) or value is None:
            self.fail(line, field, "expected a number, got {!r}", value)
        try:
            out = float(value)
        except (TypeError, ValueError):
            self.fail(line, field, "expected a number, got {!r}", value)
        if math.isnan(out):
            self.fail(line, field, "NaN is not allowed")
        return out

    def integer(self, line: int, values: Dict, field: str) -> int:
        value = values.get(field)
        if isinstance(value, bool) or not isinstance(value, int):
            self.fail(line, field, "expected an integer, got {!r}", value)
        return value

    def flag(self, line: int, values: Dict, field: str) -> bool:
        value = values.get(field)
        if not isinstance(value, bool):
            self.fail(line, field, "expected true or false, got {!r}", value)
        return value

    def kind(self, line: int, values: Dict, field: str) -> BusKind:
        value = values.get(field)
        try:
            return BusKind(str(value).upper())
        except ValueError:
            self.fail(line, field, "expected AC or DC, got {!r}", value)


def _document_lines(root) -> Tuple[Dict[str, int], Dict[str, List[int]]]:
    header: Dict[str, int] = {}
    rows: Dict[str, List[int]] = {}
    if isinstance(root, yaml.MappingNode):
        for key, value in root.value:
            header[key.value] = key.start_mark.line + 1
            if isinstance(value, yaml.SequenceNode):
                rows[key.value] = [item.start_mark.line + 1 for item in value.value]
    return header, rows


def parse_case(text: str, source: str = "<case>") -> Network:
    """
    Parse the content of a case file into a validated Network

    Raises
    ------
    CaseParseError
        malformed document, unknown version, wrong row shape or field type
    CaseSemanticError
        a structural invariant of the network is violated
    """
    try:
        root = yaml.compose(text, Loader=yaml.SafeLoader)
        doc = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = mark.line + 1 if mark is not None else 0
        raise CaseParseError(
            "{}:{}: malformed document: {}", source, line, getattr(e, "problem", e)
        )
    if not isinstance(doc, dict):
        raise CaseParseError("{}:1: a case file must be a mapping", source)
    header, row_lines = _document_lines(root)

    def table(name: str) -> _Table:
        return _Table(
            source, name, doc.get(name), row_lines.get(name, []), header.get(name, 0)
        )

    top = _Table(source, "header", [], [], 0)
    version = doc.get("version")
    if version not in SUPPORTED_VERSIONS:
        top.fail(
            header.get("version", 1), "version", "unsupported version {!r}", version
        )
    units = doc.get("units", "MW")
    if units not in ("MW", "pu"):
        top.fail(header.get("units", 0), "units", "expected MW or pu, got {!r}", units)
    base_mva = top.number(header.get("base_mva", 0), doc, "base_mva", 100.0)
    if base_mva <= 0:
        top.fail(header.get("base_mva", 0), "base_mva", "must be positive")
    a_q = top.number(header.get("a_q", 0), doc, "a_q", 0.001)
    scale = 1.0 / base_mva if units == "MW" else 1.0
    regions = doc.get("regions") or []
    if not isinstance(regions, list):
        top.fail(header.get("regions", 0), "regions", "expected a list")

    buses = []
    tab = table("bus")
    for line, row in tab.rows(BUS_COLUMNS, BUS_OPTIONAL):
        region = row["region"]
        buses.append(
            Bus(
                id=tab.integer(line, row, "id"),
                kind=tab.kind(line, row, "kind"),
                v_min=tab.number(line, row, "vmin"),
                v_max=tab.number(line, row, "vmax"),
                is_ref=tab.flag(line, row, "ref"),
                region=None if region is None else str(region),
                p_load=tab.number(line, row, "pload") * scale,
                q_load=tab.number(line, row, "qload") * scale,
                g_shunt=tab.number(line, row, "gs", 0.0) * scale,
                b_shunt=tab.number(line, row, "bs", 0.0) * scale,
            )
        )

    branches = []
    tab = table("branch")
    for line, row in tab.rows(BRANCH_COLUMNS, BRANCH_OPTIONAL):
        branches.append(
            Branch(
                from_bus=tab.integer(line, row, "from"),
                to_bus=tab.integer(line, row, "to"),
                r=tab.number(line, row, "r"),
                x=tab.number(line, row, "x", 0.0),
                b=tab.number(line, row, "b", 0.0),
            )
        )

    generators = []
    tab = table("gen")
    for line, row in tab.rows(GEN_COLUMNS):
        generators.append(
            Generator(
                bus=tab.integer(line, row, "bus"),
                p_min=tab.number(line, row, "pmin") * scale,
                p_max=tab.number(line, row, "pmax") * scale,
                q_min=tab.number(line, row, "qmin") * scale,
                q_max=tab.number(line, row, "qmax") * scale,
                b_g=tab.number(line, row, "bg"),
            )
        )

    converters = []
    tab = table("conv")
    for line, row in tab.rows(CONV_COLUMNS, CONV_OPTIONAL):
        s_rated = tab.number(line, row, "srated") * scale
        if s_rated <= 0:
            tab.fail(line, "srated", "must be positive")
        c0, c2 = default_loss_coefficients(s_rated)
        if row.get("c0") is not None:
            c0 = tab.number(line, row, "c0")
        if row.get("c2") is not None:
            c2 = tab.number(line, row, "c2")
        converters.append(
            Converter(
                ac_bus=tab.integer(line, row, "acbus"),
                dc_bus=tab.integer(line, row, "dcbus"),
                s_rated=s_rated,
                loss_c0=c0,
                loss_c2=c2,
            )
        )

    net = Network(
        buses=tuple(buses),
        branches=tuple(branches),
        generators=tuple(generators),
        converters=tuple(converters),
        base_mva=base_mva,
        a_q=a_q,
        name=str(doc.get("name") or ""),
        regions=tuple(str(r) for r in regions),
    )
    try:
        net.validate()
    except CaseSemanticError as e:
        raise CaseSemanticError("{}: {}", source, e) from e
    logger.debug(
        "parsed %s: %d buses, %d branches, %d generators, %d converters",
        source,
        len(buses),
        len(branches),
        len(generators),
        len(converters),
    )
    return net


def read_case(path: str) -> Network:
    try:
        with fsspec.open(str(path), "rt", encoding="utf-8") as f:
            text = f.read()
    except (OSError, ValueError) as e:
        raise CaseParseError("{}: cannot read case file: {}", path, e)
    return parse_case(text, source=str(path))


def serialize_case(net: Network) -> str:
    """Write a network as a case file in per-unit"""
    doc: Dict[str, Any] = {
        "version": 1,
        "name": net.name,
        "units": "pu",
        "base_mva": float(net.base_mva),
        "a_q": float(net.a_q),
    }
    if net.regions:
        doc["regions"] = list(net.regions)
    doc["bus"] = [
        [
            b.id,
            b.kind.value,
            float(b.v_min),
            float(b.v_max),
            bool(b.is_ref),
            b.region,
            float(b.p_load),
            float(b.q_load),
            float(b.g_shunt),
            float(b.b_shunt),
        ]
        for b in net.buses
    ]
    doc["branch"] = [
        [br.from_bus, br.to_bus, float(br.r), float(br.x), float(br.b)]
        for br in net.branches
    ]
    gens = []
    for g in net.generators:
        if g.is_auxiliary:
            raise CaseSemanticError(
                "auxiliary generator at bus {} cannot be serialized", g.bus
            )
        gens.append(
            [
                g.bus,
                float(g.p_min),
                float(g.p_max),
                float(g.q_min),
                float(g.q_max),
                float(g.b_g),
            ]
        )
    doc["gen"] = gens
    doc["conv"] = [
        [c.ac_bus, c.dc_bus, float(c.s_rated), float(c.loss_c0), float(c.loss_c2)]
        for c in net.converters
    ]
    return yaml.safe_dump(
        doc, default_flow_style=None, sort_keys=False, allow_unicode=True
    )
