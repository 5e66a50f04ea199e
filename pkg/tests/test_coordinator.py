import math
import time

import numpy as np
import pytest

from acdc_opf.admm import (
    AdmmConfig,
    InProcessTransport,
    broadcast,
    initial_states,
    run,
    solve_region,
    update_duals,
    update_z,
)
from acdc_opf.admm.updates import row_weights
from acdc_opf.helper.exception import RegionSolveError
from acdc_opf.opf import evaluate_balance, optimality_gap
from acdc_opf.partition import partition, split_solution

CASES = ["five_bus_2r", "acdc_2r", "fifteen_bus_3r"]


def deterministic(trace):
    return [
        (t.iteration, t.residual, t.objective, t.rho, t.gamma, t.mismatch)
        for t in trace
    ]


@pytest.fixture(scope="module")
def results(parts):
    """Default runs, solved once per module; `seconds` keeps their wall time"""
    cache = {}

    def get(name: str):
        if name not in cache:
            start = time.perf_counter()
            cache[name] = run(parts(name), AdmmConfig())
            get.seconds[name] = time.perf_counter() - start
        return cache[name]

    get.seconds = {}
    return get


@pytest.mark.parametrize("name", CASES)
def test10_converges_to_central(central, results, name):
    result = results(name)
    sol = central(name)
    assert result.converged
    assert result.residual <= 1e-3
    assert result.solution.status == "converged"
    assert optimality_gap(sol.objective, result.objective) <= 1e-3
    balance = evaluate_balance(sol.network, result.solution)
    assert balance.max() <= 10 * 1e-3


@pytest.mark.parametrize("name", CASES)
def test11_trace(results, name):
    result = results(name)
    assert len(result.trace) == result.iterations
    assert [t.iteration for t in result.trace] == list(range(1, result.iterations + 1))
    assert result.trace[-1].residual == result.residual
    assert result.best_iteration == result.iterations
    assert max(result.trace[-1].mismatch.values()) == pytest.approx(result.residual)


@pytest.mark.parametrize("name", CASES)
def test12_penalty_grows_by_tau(results, name):
    result = results(name)
    for k in range(len(result.states)):
        rhos = [t.rho[k] for t in result.trace]
        assert rhos == sorted(rhos)
        for rho in rhos:
            power = math.log(rho / 100.0) / math.log(1.1)
            assert power == pytest.approx(round(power), abs=1e-9)


@pytest.mark.parametrize("name", CASES)
def test13_runtime(results, name):
    results(name)
    assert results.seconds[name] <= 60.0


def test20_single_region(case, central):
    net = case("nine_bus")
    net = net._replace(buses=tuple(b._replace(region="A") for b in net.buses))
    result = run(partition(net), AdmmConfig())
    assert result.converged
    assert result.iterations == 1
    assert result.residual == 0.0
    assert result.objective == pytest.approx(central("nine_bus").objective, rel=1e-6)


def test21_infinite_tolerance(parts):
    result = run(parts("five_bus_2r"), AdmmConfig(eps=math.inf))
    assert result.converged
    assert result.iterations == 1
    # no update once converged
    assert result.trace[0].rho == (100.0, 100.0)


@pytest.mark.parametrize("name", CASES)
def test22_fixed_point(central, parts, name):
    part = parts(name)
    sol = central(name)
    cfg = AdmmConfig()
    regions = list(part.regions)
    states = initial_states(part, cfg, seed=split_solution(part, sol))
    weights = {r: row_weights(part, r, cfg) for r in regions}

    solved = {}
    for r in regions:
        nlp = solve_region(
            part.regions[r], states[r], weights[r], cfg.solver_options()
        )
        np.testing.assert_allclose(nlp.x, states[r].x, atol=1e-5)
        solved[r] = states[r]._replace(x=nlp.x)

    outgoing = broadcast(part, solved, 1)
    inbox = InProcessTransport(regions).exchange(1, outgoing)
    for r in regions:
        rp = part.regions[r]
        z = update_z(part, r, outgoing[r], inbox[r], 1)
        np.testing.assert_allclose(z, states[r].z, atol=1e-5)
        st = update_duals(rp, solved[r]._replace(z=z), weights[r])
        np.testing.assert_allclose(
            st.lam, states[r].lam, atol=cfg.rho0 * cfg.w_voltage * 1e-5
        )

    result = run(part, cfg, seed=split_solution(part, sol))
    assert result.converged
    assert result.iterations == 1
    assert result.objective == pytest.approx(sol.objective, rel=1e-5)


def test23_iteration_limit(parts):
    result = run(parts("fifteen_bus_3r"), AdmmConfig(max_iterations=3))
    assert not result.converged
    assert result.iterations == 3
    residuals = [t.residual for t in result.trace]
    assert result.residual == min(residuals)
    assert residuals[result.best_iteration - 1] == result.residual
    assert result.solution.status == "max_iter"


def test30_dc_weight(central, results, parts, record_property):
    reference = central("acdc_2r").objective
    runs = {
        1.0: run(parts("acdc_2r"), AdmmConfig(w_power_dc=1.0)),
        10.0: results("acdc_2r"),
    }
    for w_power_dc, result in runs.items():
        assert result.converged
        assert optimality_gap(reference, result.objective) <= 1e-3
        record_property(
            "iterations_w_power_dc_{:g}".format(w_power_dc), result.iterations
        )


def test40_socket_transport(results, parts):
    inproc = results("acdc_2r")
    socket = run(parts("acdc_2r"), AdmmConfig(transport="socket"))
    assert socket.converged
    assert socket.iterations == inproc.iterations
    assert deterministic(socket.trace) == deterministic(inproc.trace)
    assert socket.objective == inproc.objective


def test41_parallel_workers(parts):
    part = parts("fifteen_bus_3r")
    cfg = AdmmConfig(max_iterations=20)
    serial = run(part, cfg)
    parallel = run(part, cfg._replace(workers=2))
    assert parallel.iterations == serial.iterations
    np.testing.assert_allclose(
        [t.residual for t in parallel.trace], [t.residual for t in serial.trace]
    )
    assert parallel.objective == pytest.approx(serial.objective, rel=1e-12)


def test50_region_failure(parts):
    cfg = AdmmConfig(solver_max_iter=1)
    with pytest.raises(RegionSolveError) as e:
        run(parts("five_bus_2r"), cfg)
    assert e.value.region in ("A", "B")
