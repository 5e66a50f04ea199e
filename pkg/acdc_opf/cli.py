"""
Command line interface.

    acdc-opf solve CASE|--case CASE [--mode central|distributed] [--out DIR] ...
    acdc-opf sweep CASE --rho0 10 --rho0 100 --tau 1.05 --tau 1.1 --out DIR
    acdc-opf partition CASE [--out DIR]
    acdc-opf check CASE [--points 20] [--seed 0]

Exit codes: 0 success, 2 usage, 3 parse, 4 config, 5 infeasible,
6 no convergence, 7 solver failure, 8 transport or consensus failure.
Verbosity follows the LOG_LEVEL environment variable.
"""

import csv
import json
import logging
import os
from multiprocessing import Pool
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import typer

from .admm import MISMATCH_LABELS, AdmmConfig, IterationTrace, run
from .admm.updates import augment_subproblem, initial_states, row_weights
from .casefile import read_case
from .helper.exception import (
    AcdcOpfException,
    ConfigError,
    NoConvergenceError,
    SolverError,
)
from .helper.json import CustomJSONEncoder, dump_json
from .manifest import RunManifest
from .network import Network
from .nlp import SolverOptions, check_derivatives
from .opf import (
    OpfModel,
    compare_solutions,
    evaluate_balance,
    optimality_gap,
    region_balance,
    solve_central,
    tie_flows,
)
from .partition import partition, partition_report

LOG_FORMAT = "%(asctime)s %(levelname)s %(process)d:%(name)s - %(message)s"

logger = logging.getLogger(__name__)

app = typer.Typer(help="Optimal power flow for hybrid AC-DC grids")

SWEEP_COLUMNS = ("rho0", "tau", "status", "iterations", "objective", "gap", "error")


def setup_logging() -> None:
    logging.basicConfig(
        level=os.environ.get("LOG_LEVEL", "INFO").upper(), format=LOG_FORMAT
    )


def _number(value: Any) -> str:
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_trace(path: Path, trace: Sequence[IterationTrace], regions: List[str]):
    """Deterministic per-iteration data, wall-clock times excluded"""
    header = ["iteration", "residual", "objective"]
    header += ["rho_{}".format(r) for r in regions]
    header += ["gamma_{}".format(r) for r in regions]
    header += [
        "mismatch_{}".format(label.replace(" ", "_")) for label in MISMATCH_LABELS
    ]
    header += ["nlp_iterations_{}".format(r) for r in regions]
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for t in trace:
            row = [t.iteration, t.residual, t.objective, *t.rho, *t.gamma]
            row += [t.mismatch[label] for label in MISMATCH_LABELS]
            row += list(t.nlp_iterations)
            writer.writerow([_number(v) for v in row])


def write_timing(path: Path, trace: Sequence[IterationTrace]):
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["iteration", "solve", "exchange", "update"])
        for t in trace:
            times = [t.timings[k] for k in ("solve", "exchange", "update")]
            writer.writerow([t.iteration] + ["{:.6f}".format(v) for v in times])


def _prepare_out(manifest: RunManifest) -> Optional[Path]:
    out = manifest.out
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        dump_json(manifest, out / "manifest.json")
    return out


def _report_error(out: Optional[Path], e: AcdcOpfException) -> int:
    logger.error("%s error: %s", e.error_class, e)
    if out is not None:
        dump_json(e, out / "error.json")
    return e.exit_code


def run_solve(manifest: RunManifest, net: Network, out: Optional[Path]) -> dict:
    """
    Solve and write the result documents.

    Raises
    ------
    NoConvergenceError
        after writing the trace and the best iterate of a distributed solve
        that hit its iteration limit
    """
    cfg = manifest.config
    options = SolverOptions(tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    summary: Dict[str, Any] = {"mode": manifest.mode, "case": manifest.case}
    central = None
    if manifest.mode == "central" or manifest.compare_central:
        central = solve_central(net, options)

    if manifest.mode == "central":
        sol = central
        summary.update(
            {
                "objective": sol.objective,
                "iterations": sol.iterations,
                "status": sol.status,
                "kkt": sol.kkt._asdict(),
            }
        )
        result = None
    else:
        part = partition(net)
        if out is not None:
            dump_json(partition_report(part), out / "partition.json")
        result = run(part, cfg, progress=True)
        sol = result.solution
        if out is not None:
            write_trace(out / "trace.csv", result.trace, list(part.regions))
            write_timing(out / "timing.csv", result.trace)
        summary.update(
            {
                "objective": sol.objective,
                "iterations": result.iterations,
                "status": "converged" if result.converged else "max_iter",
                "residual": result.residual,
                "best_iteration": result.best_iteration,
            }
        )
        if central is not None:
            summary["central_objective"] = central.objective
            summary["gap"] = optimality_gap(central.objective, sol.objective)
            summary["comparison"] = compare_solutions(central, sol)

    summary["balance_residual"] = evaluate_balance(net, sol).max()
    if net.region_ids():
        summary["regions"] = {
            r: b._asdict() for r, b in region_balance(net, sol).items()
        }
        summary["ties"] = [t._asdict() for t in tie_flows(net, sol)]
    if out is not None:
        dump_json(sol, out / "solution.json")
        dump_json(summary, out / "summary.json")
    if result is not None and not result.converged:
        raise NoConvergenceError(
            "no consensus after {} iterations, residual {:.3e} > {:.3e}",
            result.iterations,
            result.residual,
            cfg.eps,
        )
    return summary


def cmd_solve(manifest: RunManifest) -> int:
    """Exit code of a solve run; errors are written to error.json"""
    out = None
    try:
        manifest.validate()
        out = _prepare_out(manifest)
        net = read_case(manifest.case)
        summary = run_solve(manifest, net, out)
    except AcdcOpfException as e:
        return _report_error(out, e)
    logger.info("objective %.6f €/h", summary["objective"])
    if "gap" in summary:
        logger.info("optimality gap %.4e", summary["gap"])
    return 0


def _sweep_cell(args) -> dict:
    net, base, reference, rho0, tau = args
    row = {"rho0": rho0, "tau": tau, "status": "", "iterations": "", "objective": ""}
    row.update({"gap": "", "error": ""})
    try:
        cfg = base._replace(rho0=rho0, tau=tau).validate()
        result = run(partition(net), cfg)
    except AcdcOpfException as e:
        row.update(status=e.error_class, error=str(e))
        return row
    row.update(
        status="converged" if result.converged else "max_iter",
        iterations=result.iterations,
        objective=result.objective,
        gap=optimality_gap(reference, result.objective),
    )
    return row


def cmd_sweep(
    manifest: RunManifest,
    rho_grid: Sequence[float],
    tau_grid: Sequence[float],
    parallel: int = 1,
) -> List[dict]:
    """
    Distributed solve for every (rho0, tau) cell. Failing cells are
    recorded with their error class and the sweep goes on.
    """
    if not rho_grid or not tau_grid:
        raise ConfigError("empty sweep grid")
    out = _prepare_out(manifest)
    net = read_case(manifest.case)
    cfg = manifest.config
    reference = solve_central(
        net, SolverOptions(tol=cfg.solver_tol, max_iter=cfg.solver_max_iter)
    ).objective
    base = cfg._replace(workers=1) if parallel > 1 else cfg
    cells = [(net, base, reference, r, t) for r in rho_grid for t in tau_grid]
    if parallel > 1:
        with Pool(parallel) as pool:
            rows = pool.map(_sweep_cell, cells)
    else:
        rows = [_sweep_cell(c) for c in cells]
    if out is not None:
        with open(out / "sweep.csv", "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, SWEEP_COLUMNS, lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _number(v) for k, v in row.items()})
    return rows


def cmd_partition(case: str, out: Optional[Path] = None) -> dict:
    report = partition_report(partition(read_case(case)))
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        dump_json(report, Path(out) / "partition.json")
    return report


def cmd_check(case: str, points: int = 20, seed: int = 0) -> Dict[str, dict]:
    """Finite-difference reports of the central, regional and augmented problems"""
    net = read_case(case)
    central = OpfModel(net).problem()
    reports = {"central": check_derivatives(central, count=points, seed=seed)}
    if len(net.region_ids()) > 1:
        part = partition(net)
        cfg = AdmmConfig()
        states = initial_states(part, cfg)
        for r, rp in part.regions.items():
            reports["region:{}".format(r)] = check_derivatives(
                rp.problem(z=states[r].z), count=points, seed=seed
            )
            augmented = augment_subproblem(rp, states[r], row_weights(part, r, cfg))
            reports["augmented:{}".format(r)] = check_derivatives(
                augmented, count=points, seed=seed
            )
    return reports


def _config(config: Optional[Path], **overrides) -> AdmmConfig:
    cfg = AdmmConfig.from_yaml(str(config)) if config is not None else AdmmConfig()
    return cfg._replace(**{k: v for k, v in overrides.items() if v is not None})


@app.command()
def solve(
    case: Optional[str] = typer.Argument(None, help="Case file"),
    case_option: Optional[str] = typer.Option(
        None, "--case", help="Case file, in place of the argument"
    ),
    mode: str = typer.Option("central", help="central or distributed"),
    transport: Optional[str] = typer.Option(None, help="inproc or socket"),
    rho0: Optional[float] = typer.Option(None, help="Initial penalty"),
    tau: Optional[float] = typer.Option(None, help="Penalty increase factor"),
    theta: Optional[float] = typer.Option(None, help="Required residual decrease"),
    eps: Optional[float] = typer.Option(None, help="Consensus tolerance"),
    w_voltage: Optional[float] = typer.Option(None, help="Weight of voltage rows"),
    w_power_ac: Optional[float] = typer.Option(None, help="Weight of AC power rows"),
    w_power_dc: Optional[float] = typer.Option(None, help="Weight of DC power rows"),
    max_iter: Optional[int] = typer.Option(None, help="ADMM iteration limit"),
    workers: Optional[int] = typer.Option(None, help="Processes for regional solves"),
    solver_tol: Optional[float] = typer.Option(None, help="NLP KKT tolerance"),
    compare_central: bool = typer.Option(False, help="Report the optimality gap"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
    seed: int = typer.Option(
        0, help="Recorded in manifest.json; the solve itself draws no random numbers"
    ),
    config: Optional[Path] = typer.Option(None, help="YAML file of ADMM settings"),
):
    """Solve a case centrally or distributed over its regions."""
    case = case_option or case
    if case is None:
        raise typer.BadParameter("a case file is required")
    setup_logging()
    try:
        cfg = _config(
            config,
            transport=transport,
            rho0=rho0,
            tau=tau,
            theta=theta,
            eps=eps,
            w_voltage=w_voltage,
            w_power_ac=w_power_ac,
            w_power_dc=w_power_dc,
            max_iterations=max_iter,
            workers=workers,
            solver_tol=solver_tol,
        )
    except AcdcOpfException as e:
        raise typer.Exit(_report_error(None, e))
    manifest = RunManifest(
        case=case,
        mode=mode,
        config=cfg,
        out=out,
        compare_central=compare_central,
        seed=seed,
    )
    raise typer.Exit(cmd_solve(manifest))


@app.command()
def sweep(
    case: str = typer.Argument(..., help="Case file"),
    rho0: List[float] = typer.Option(..., help="Initial penalties, repeatable"),
    tau: List[float] = typer.Option(..., help="Penalty factors, repeatable"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
    parallel: int = typer.Option(1, help="Cells solved in parallel"),
    max_iter: Optional[int] = typer.Option(None, help="ADMM iteration limit"),
    eps: Optional[float] = typer.Option(None, help="Consensus tolerance"),
    config: Optional[Path] = typer.Option(None, help="YAML file of ADMM settings"),
):
    """Distributed solves over a grid of (rho0, tau)."""
    setup_logging()
    try:
        cfg = _config(config, max_iterations=max_iter, eps=eps)
        manifest = RunManifest(case=case, mode="distributed", config=cfg, out=out)
        rows = cmd_sweep(manifest, rho0, tau, parallel)
    except AcdcOpfException as e:
        raise typer.Exit(_report_error(out, e))
    for row in rows:
        typer.echo(json.dumps(row, cls=CustomJSONEncoder))


@app.command("partition")
def partition_command(
    case: str = typer.Argument(..., help="Case file"),
    out: Optional[Path] = typer.Option(None, help="Output directory"),
):
    """Print the regions, ties and consensus dimension of a case."""
    setup_logging()
    try:
        report = cmd_partition(case, out)
    except AcdcOpfException as e:
        raise typer.Exit(_report_error(out, e))
    typer.echo(json.dumps(report, cls=CustomJSONEncoder, indent=2))


@app.command()
def check(
    case: str = typer.Argument(..., help="Case file"),
    points: int = typer.Option(20, help="Random interior points"),
    seed: int = typer.Option(0, help="Random seed"),
    tol: float = typer.Option(1e-5, help="Largest accepted relative error"),
):
    """Compare analytic derivatives with finite differences."""
    setup_logging()
    try:
        reports = cmd_check(case, points, seed)
    except AcdcOpfException as e:
        raise typer.Exit(_report_error(None, e))
    typer.echo(json.dumps(reports, cls=CustomJSONEncoder, indent=2))
    failed = [name for name, rep in reports.items() if not rep.ok(tol)]
    if failed:
        logger.error("derivative check failed for %s", ", ".join(failed))
        raise typer.Exit(SolverError.exit_code)
