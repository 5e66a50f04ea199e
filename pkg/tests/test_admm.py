import math
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from acdc_opf.admm import (
    AdmmConfig,
    RegionState,
    augment_subproblem,
    broadcast,
    consensus_target,
    global_residual,
    global_residual_from_messages,
    initial_states,
    update_duals,
    update_penalty,
    update_z,
)
from acdc_opf.admm.updates import local_residual, mismatch_by_kind, row_weights
from acdc_opf.helper.exception import ConfigError, StaleMessageError
from acdc_opf.nlp import check_derivatives
from acdc_opf.partition import CouplingKind, partition, split_solution


def datafile(name: str) -> Path:
    return Path(__file__).parent / "data" / name


def scalar_region() -> SimpleNamespace:
    """A region with one coupling row on its first variable"""
    return SimpleNamespace(
        region="R", rows=np.array([0]), cols=np.array([0]), coefs=np.array([1.0])
    )


def scalar_state(x: float, z: float, rho: float = 100.0, **kwargs) -> RegionState:
    return RegionState(
        region="R",
        x=np.array([x]),
        z=np.array([z]),
        lam=np.zeros(1),
        rho=rho,
        **kwargs,
    )


def test10_augmented_objective(parts):
    part = parts("five_bus_2r")
    rp = part.regions["A"]
    st = initial_states(part, AdmmConfig())["A"]
    weights = np.ones(len(rp.rows))
    base = rp.problem(z=st.z)
    augmented = augment_subproblem(rp, st, weights)
    x = st.x
    # no penalty and no dual term at z = x with zero multipliers
    assert augmented.objective(x)[0] == pytest.approx(base.objective(x)[0])
    np.testing.assert_allclose(augmented.objective(x)[1], base.objective(x)[1])

    row = [c.kind for c in part.constraints].index(CouplingKind.PGEN)
    z = st.z.copy()
    z[row] -= 0.01
    augmented = augment_subproblem(rp, st._replace(z=z), weights)
    added = augmented.objective(x)[0] - base.objective(x)[0]
    # rho / 2 * w * d^2 = 100 / 2 * 1e-4
    assert added == pytest.approx(5e-3)


def test11_augmented_dimension_mismatch(parts):
    part = parts("five_bus_2r")
    rp = part.regions["A"]
    st = initial_states(part, AdmmConfig())["A"]
    with pytest.raises(ValueError):
        augment_subproblem(rp, st._replace(lam=np.zeros(3)), np.ones(4))
    with pytest.raises(ValueError):
        augment_subproblem(rp, st, np.ones(2))


def test12_augmented_derivatives(parts):
    part = parts("acdc_2r")
    states = initial_states(part, AdmmConfig())
    for r, rp in part.regions.items():
        st = states[r]._replace(lam=np.full(len(rp.rows), 0.3))
        p = augment_subproblem(rp, st, row_weights(part, r, AdmmConfig()))
        assert check_derivatives(p, count=10, seed=2).ok(1e-5)


def test13_row_weights(parts):
    cfg = AdmmConfig()
    np.testing.assert_array_equal(
        row_weights(parts("five_bus_2r"), "A", cfg), [100.0, 100.0, 1.0, 1.0]
    )
    np.testing.assert_array_equal(
        row_weights(parts("acdc_2r"), "B", cfg), [100.0, 10.0]
    )


@pytest.mark.parametrize(
    "is_voltage, own, other, target",
    [(True, 1.02, 1.00, 1.01), (False, 0.50, -0.48, 0.49), (False, 0.3, -0.3, 0.3)],
)
def test20_consensus_target(is_voltage, own, other, target):
    assert consensus_target(is_voltage, own, other) == pytest.approx(target)


def test21_dual_update():
    rp = scalar_region()
    st = update_duals(rp, scalar_state(1.0, 0.99), np.ones(1))
    assert st.lam[0] == pytest.approx(1.0)

    st = update_duals(rp, st._replace(x=np.array([0.99])), np.ones(1))
    assert st.lam[0] == pytest.approx(1.0)

    st = update_duals(rp, scalar_state(1.0, 0.99, rho=10.0), np.full(1, 100.0))
    assert st.lam[0] == pytest.approx(10.0)


@pytest.mark.parametrize(
    "previous, current, power",
    [(0.6, 0.5, 0), (0.5, 0.499, 1), (np.inf, 3.0, 0), (0.0, 0.0, 0)],
)
def test22_penalty_update(previous, current, power):
    cfg = AdmmConfig()
    st = scalar_state(current, 0.0, gamma=previous)
    st = update_penalty(scalar_region(), st, cfg)
    assert st.gamma == pytest.approx(current)
    assert st.rho_power == power
    assert st.rho == pytest.approx(100.0 * 1.1 ** power)


def test23_penalty_is_monotone():
    cfg = AdmmConfig()
    rp = scalar_region()
    st = scalar_state(1.0, 0.0)
    rhos = []
    for residual in (1.0, 0.9, 0.95, 0.5, 0.7, 0.1):
        st = update_penalty(rp, st._replace(x=np.array([residual])), cfg)
        rhos.append(st.rho)
    assert rhos == sorted(rhos)
    assert rhos[-1] == pytest.approx(100.0 * 1.1 ** 2)


def test24_local_residual():
    assert local_residual(scalar_region(), scalar_state(1.0, 0.75)) == 0.25
    empty = SimpleNamespace(rows=np.array([]), cols=np.array([], dtype=int))
    assert local_residual(empty, scalar_state(1.0, 0.0)) == 0.0


def test30_broadcast(case, parts):
    for name, size in (("five_bus_2r", 2), ("acdc_2r", 1)):
        part = parts(name)
        out = broadcast(part, initial_states(part, AdmmConfig()), 1)
        for region, messages in out.items():
            assert sorted(m.tag for m in messages) == ["S", "V"]
            assert all(len(m.values) == size for m in messages)
            assert all(m.sender == region and m.iteration == 1 for m in messages)
            assert all(m.receiver != region for m in messages)

    net = case("nine_bus")
    single = partition(
        net._replace(buses=tuple(b._replace(region="A") for b in net.buses))
    )
    assert broadcast(single, initial_states(single, AdmmConfig()), 1) == {"A": []}


def test31_update_z_at_consensus(central, parts):
    part = parts("fifteen_bus_3r")
    seed = split_solution(part, central("fifteen_bus_3r"))
    states = initial_states(part, AdmmConfig(), seed)
    out = broadcast(part, states, 4)
    inbox = {r: [] for r in part.regions}
    for messages in out.values():
        for m in messages:
            inbox[m.receiver].append(m)
    for r, rp in part.regions.items():
        z = update_z(part, r, out[r], inbox[r], 4)
        np.testing.assert_allclose(z, states[r].x[rp.cols], atol=1e-12)
        again = update_z(part, r, out[r], inbox[r], 4)
        np.testing.assert_array_equal(z, again)


def test32_stale_message(parts):
    part = parts("five_bus_2r")
    states = initial_states(part, AdmmConfig())
    out = broadcast(part, states, 1)
    with pytest.raises(StaleMessageError):
        update_z(part, "A", out["A"], out["B"], 2)


def test40_residual_from_messages(parts):
    rng = np.random.default_rng(0)
    for name in ("five_bus_2r", "acdc_2r", "fifteen_bus_3r"):
        part = parts(name)
        states = initial_states(part, AdmmConfig())
        states = {
            r: st._replace(x=st.x + 0.01 * rng.standard_normal(len(st.x)))
            for r, st in states.items()
        }
        expected = global_residual(part, states)
        assert expected > 0
        out = broadcast(part, states, 1)
        assert global_residual_from_messages(part, out) == pytest.approx(expected)


def test41_mismatch_by_kind(parts):
    part = parts("acdc_2r")
    states = initial_states(part, AdmmConfig())
    rp = part.regions["A"]
    x = states["A"].x.copy()
    x[rp.cols[0]] += 0.02
    states["A"] = states["A"]._replace(x=x)
    mismatch = mismatch_by_kind(part, states)
    assert mismatch["DC Vdc"] == pytest.approx(0.02)
    assert mismatch["AC Vmag"] == 0.0


def test42_seeded_multipliers(central, parts):
    part = parts("five_bus_2r")
    seed = split_solution(part, central("five_bus_2r"))
    states = initial_states(part, AdmmConfig(), seed)
    assert global_residual(part, states) < 1e-12
    assert any(np.any(st.lam != 0) for st in states.values())


def test50_config_defaults():
    cfg = AdmmConfig().validate()
    assert (cfg.rho0, cfg.tau, cfg.theta, cfg.eps) == (100.0, 1.1, 0.99, 1e-3)
    assert (cfg.w_voltage, cfg.w_power_ac, cfg.w_power_dc) == (100.0, 1.0, 10.0)
    assert cfg.rho(2) == pytest.approx(121.0)
    assert cfg.solver_options().tol == 1e-8
    # inexact regional solves while far from consensus
    assert cfg.solver_options(1.0).tol == 1e-4
    assert cfg.solver_options(1e-3).tol == pytest.approx(1e-5)
    assert cfg.solver_options(1e-3).acceptable_tol == pytest.approx(1e-5)
    assert cfg.solver_options(math.inf).tol == 1e-8
    assert AdmmConfig(solver_tol_ratio=0.0).solver_options(1.0).tol == 1e-8


@pytest.mark.parametrize(
    "field, value",
    [
        ("rho0", 0.0),
        ("tau", 1.0),
        ("theta", 1.0),
        ("eps", 0.0),
        ("w_power_dc", -1.0),
        ("max_iterations", 0),
        ("solver_tol_ratio", -0.1),
        ("transport", "carrier-pigeon"),
    ],
)
def test51_config_invalid(field, value):
    with pytest.raises(ConfigError):
        AdmmConfig()._replace(**{field: value}).validate()


def test52_config_yaml(tmp_path):
    cfg = AdmmConfig.from_yaml(str(datafile("admm.yaml")))
    assert cfg.max_iterations == 300
    assert cfg.eps == 1e-3
    assert isinstance(cfg.rho0, float)

    bad = tmp_path / "bad.yaml"
    bad.write_text("rho0: 100\nrho_max: 1000\n")
    with pytest.raises(ConfigError) as e:
        AdmmConfig.from_yaml(str(bad))
    assert "rho_max" in str(e.value)

    with pytest.raises(ConfigError):
        AdmmConfig.from_yaml(str(tmp_path / "missing.yaml"))
    with pytest.raises(ConfigError):
        AdmmConfig.from_dict({"eps": "tight"})
