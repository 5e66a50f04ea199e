from collections import Counter

import numpy as np
import pytest

from acdc_opf import BusKind
from acdc_opf.helper.exception import ConsensusError, PartitionError
from acdc_opf.nlp import check_derivatives
from acdc_opf.opf import OpfModel, evaluate_balance, objective_value
from acdc_opf.partition import (
    AUX_V_MAX,
    AUX_V_MIN,
    CouplingKind,
    consensus_multipliers,
    partition,
    partition_report,
    reconstruct,
    split_solution,
)


def stacked(part) -> np.ndarray:
    """The global consensus matrix [A_1 ... A_K] as a dense array"""
    return np.hstack([rp.A.toarray() for rp in part.regions.values()])


def test10_ac_tie(case, parts):
    net = case("five_bus_2r")
    part = parts("five_bus_2r")
    assert list(part.regions) == ["A", "B"]
    assert part.dimension == 4
    assert [c.kind for c in part.constraints] == [
        CouplingKind.VMAG,
        CouplingKind.VANG,
        CouplingKind.PGEN,
        CouplingKind.QGEN,
    ]
    assert [c.coef_b for c in part.constraints] == [-1.0, -1.0, 1.0, 1.0]
    (cut,) = part.ties
    assert cut.branch == 3
    assert (cut.aux_a, cut.aux_b) == (6, 7)

    a, b = part.regions["A"].network, part.regions["B"].network
    assert len(a.buses) == 4 and len(b.buses) == 3
    assert len(a.generators) == 2 and len(b.generators) == 2
    aux_gen = a.generators[-1]
    assert aux_gen.is_auxiliary and aux_gen.bus == 6 and aux_gen.b_g == 0.0
    assert aux_gen.p_min == -aux_gen.p_max
    assert aux_gen.p_max == pytest.approx(1.1 * net.total_load())
    aux_bus = a.bus_map()[6]
    assert (aux_bus.v_min, aux_bus.v_max) == (AUX_V_MIN, AUX_V_MAX)

    tie = net.branches[3]
    half = a.branches[-1]
    assert (half.from_bus, half.to_bus) == (3, 6)
    assert half.impedance == pytest.approx(tie.impedance / 2)
    assert half.b == 0.0
    assert a.bus_map()[3].b_shunt == pytest.approx(tie.b / 2)
    assert b.bus_map()[4].b_shunt == pytest.approx(tie.b / 2)


def test11_dc_tie(parts):
    part = parts("acdc_2r")
    assert part.dimension == 2
    assert [c.kind for c in part.constraints] == [CouplingKind.VDC, CouplingKind.PGEN]
    assert all(c.bus_kind == BusKind.DC for c in part.constraints)
    (cut,) = part.ties
    assert cut.kind == BusKind.DC
    b = part.regions["B"].network
    aux = [g for g in b.generators if g.is_auxiliary]
    assert len(aux) == 1
    assert b.bus_map()[aux[0].bus].kind == BusKind.DC
    model = part.regions["B"].model
    q = model.vars.qg.start + b.generators.index(aux[0])
    assert model.lower[q] == model.upper[q] == 0.0
    # every converter stays with its region
    assert part.regions["A"].conv_origin == (0,)
    assert part.regions["B"].conv_origin == (1,)


def test12_two_nonzeros_per_row(parts):
    for name in ("five_bus_2r", "acdc_2r", "fifteen_bus_3r"):
        part = parts(name)
        A = stacked(part)
        assert A.shape[0] == part.dimension
        for c, row in zip(part.constraints, A):
            values = sorted(row[row != 0])
            if c.is_voltage:
                assert values == [-1.0, 1.0]
            else:
                assert values == [1.0, 1.0]


def test13_boundary_columns(parts):
    part = parts("fifteen_bus_3r")
    assert part.dimension == 12
    for rp in part.regions.values():
        A = rp.A.toarray()
        touched = sorted(set(np.flatnonzero(np.abs(A).sum(axis=0))))
        assert touched == rp.boundary
        assert len(rp.rows) == 8
    assert part.neighbours("A") == ["B", "C"]


def test14_gauges(parts):
    part = parts("five_bus_2r")
    assert part.regions["A"].gauges == {}
    rp = part.regions["B"]
    ((var, gauge),) = rp.gauges.items()
    m = rp.model.vars
    assert var == m.va.start + rp.model.ac_index[7]
    assert part.constraints[rp.rows[gauge.row]].kind == CouplingKind.VANG
    z = np.array([1.01, 0.2, 0.3, 0.4])
    assert rp.gauge_values(z) == {var: 0.2}
    assert rp.gauge_values() == {var: 0.0}
    p = rp.problem(z)
    assert p.lower[var] == p.upper[var] == 0.2


def test15_dc_gauge(parts):
    part = parts("acdc_2r")
    assert part.regions["A"].gauges == {}
    rp = part.regions["B"]
    ((var, gauge),) = rp.gauges.items()
    assert var == rp.model.vars.vdc.start + rp.model.dc_index[14]
    assert gauge.default == 1.0
    assert rp.gauge_values(np.array([0.98, 0.3])) == {var: 0.98}


def test16_single_region(case):
    net = case("nine_bus")
    net = net._replace(buses=tuple(b._replace(region="A") for b in net.buses))
    part = partition(net)
    assert part.dimension == 0
    assert part.ties == []
    rp = part.regions["A"]
    assert rp.network.buses == net.buses
    assert rp.network.branches == net.branches
    assert rp.gauges == {}
    model = OpfModel(net)
    np.testing.assert_array_equal(rp.model.lower, model.lower)
    np.testing.assert_array_equal(rp.model.upper, model.upper)


def test20_errors(case):
    with pytest.raises(PartitionError) as e:
        partition(case("nine_bus"))
    assert "no region tag" in str(e.value)

    net = case("five_bus_2r")
    with pytest.raises(PartitionError) as e:
        partition(net._replace(regions=("A", "B", "C")))
    assert "region 'C'" in str(e.value)

    net = case("acdc_2r")
    moved = tuple(b._replace(region="A") if b.id == 12 else b for b in net.buses)
    with pytest.raises(PartitionError) as e:
        partition(net._replace(buses=moved))
    assert "converter 1" in str(e.value)


@pytest.mark.parametrize("name", ["five_bus_2r", "acdc_2r", "fifteen_bus_3r"])
def test30_graph_round_trip(case, parts, name):
    net = case(name)
    part = parts(name)
    auxiliary = {c.aux_a for c in part.ties} | {c.aux_b for c in part.ties}
    aux = {}
    edges = []
    for rp in part.regions.values():
        for br in rp.network.branches:
            if br.to_bus in auxiliary:
                aux[br.to_bus] = br.from_bus
            else:
                edges.append(frozenset((br.from_bus, br.to_bus)))
    for cut in part.ties:
        edges.append(frozenset((aux[cut.aux_a], aux[cut.aux_b])))
    original = [frozenset((br.from_bus, br.to_bus)) for br in net.branches]
    assert Counter(edges) == Counter(original)


@pytest.mark.parametrize("name", ["five_bus_2r", "acdc_2r", "fifteen_bus_3r"])
def test40_split_is_exact(central, parts, name):
    part = parts(name)
    sol = central(name)
    split = split_solution(part, sol)
    xs = {r: split[r].to_vector(rp.model) for r, rp in part.regions.items()}
    np.testing.assert_allclose(part.residual(xs), 0.0, atol=1e-12)
    for r, rp in part.regions.items():
        assert evaluate_balance(rp.network, split[r]).max() <= 1e-6
    total = sum(
        objective_value(rp.network, split[r]) for r, rp in part.regions.items()
    )
    assert total == pytest.approx(sol.objective, rel=1e-10)


def test41_reconstruct(central, parts):
    part = parts("fifteen_bus_3r")
    sol = central("fifteen_bus_3r")
    merged = reconstruct(part, split_solution(part, sol), tol=1e-9)
    for field in ("va", "vm", "pg", "qg"):
        np.testing.assert_allclose(getattr(merged, field), getattr(sol, field))
    assert merged.objective == pytest.approx(sol.objective, rel=1e-12)
    assert merged.network is part.network


def test42_reconstruct_rejects_mismatch(central, parts):
    part = parts("five_bus_2r")
    split = split_solution(part, central("five_bus_2r"))
    rp = part.regions["B"]
    vm = split["B"].vm.copy()
    vm[rp.model.ac_index[7]] += 0.01
    split["B"] = split["B"]._replace(vm=vm)
    with pytest.raises(ConsensusError) as e:
        reconstruct(part, split, tol=1e-3)
    assert e.value.row == 0
    # without a tolerance the merge goes through
    reconstruct(part, split)


@pytest.mark.parametrize("name", ["five_bus_2r", "acdc_2r", "fifteen_bus_3r"])
def test43_consensus_multipliers(central, parts, name):
    part = parts(name)
    sol = central(name)
    split = split_solution(part, sol)
    xs = {r: split[r].to_vector(rp.model) for r, rp in part.regions.items()}
    lams = consensus_multipliers(part, xs)

    shared = {}
    for r, rp in part.regions.items():
        assert lams[r].shape == (len(rp.rows),)
        for row, lam in zip(rp.rows, lams[r]):
            shared.setdefault(int(row), []).append(lam)
    for row, values in shared.items():
        assert len(values) == 2
        assert values[0] == values[1]

    # the power rows price the cut like the buses at both ends of the tie
    net = part.network
    ac = {b.id: i for i, b in enumerate(net.ac_buses())}
    dc = {b.id: i for i, b in enumerate(net.dc_buses())}
    for c in part.constraints:
        if c.kind != CouplingKind.PGEN:
            continue
        br = net.branches[part.ties[c.tie].branch]
        if c.bus_kind == BusKind.AC:
            ends = [sol.lam_p[ac[br.from_bus]], sol.lam_p[ac[br.to_bus]]]
        else:
            ends = [sol.lam_dc[dc[br.from_bus]], sol.lam_dc[dc[br.to_bus]]]
        assert shared[c.row][0] == pytest.approx(np.mean(ends), rel=0.05)


def test50_regional_derivatives(parts):
    part = parts("acdc_2r")
    for rp in part.regions.values():
        z = np.ones(len(rp.rows))
        assert check_derivatives(rp.problem(z), count=20).ok(1e-5)


def test60_report(parts):
    report = partition_report(parts("five_bus_2r"))
    assert report["network"] == "five_bus_2r"
    assert report["ac_ties"] == 1
    assert report["dc_ties"] == 0
    assert report["consensus_dimension"] == 4
    assert report["regions"]["A"] == {
        "buses": 3,
        "auxiliary_buses": 1,
        "branches": 4,
        "generators": 1,
        "converters": 0,
        "consensus_rows": 4,
        "neighbours": ["B"],
    }
    assert report["ties"][0]["auxiliary_buses"] == [6, 7]

    report = partition_report(parts("acdc_2r"))
    assert (report["ac_ties"], report["dc_ties"]) == (0, 1)
    assert report["regions"]["B"]["converters"] == 1
