import csv
import json
from pathlib import Path

import pytest
from typer.testing import CliRunner

from acdc_opf.admm import AdmmConfig
from acdc_opf.cli import (
    SWEEP_COLUMNS,
    app,
    cmd_check,
    cmd_partition,
    cmd_solve,
    cmd_sweep,
)
from acdc_opf.helper.exception import ConfigError
from acdc_opf.manifest import RunManifest

runner = CliRunner()


def datafile(name: str) -> str:
    return str(Path(__file__).parent / "data" / name)


def load(path: Path):
    with open(path, "rt", encoding="utf-8") as f:
        return json.load(f)


def test10_central_solve(tmp_path, central):
    manifest = RunManifest(case=datafile("five_bus_2r.yaml"), out=tmp_path)
    assert cmd_solve(manifest) == 0
    assert {p.name for p in tmp_path.iterdir()} == {
        "manifest.json",
        "solution.json",
        "summary.json",
    }
    summary = load(tmp_path / "summary.json")
    assert summary["status"] == "converged"
    assert summary["objective"] == pytest.approx(central("five_bus_2r").objective)
    assert summary["balance_residual"] <= 1e-6
    assert set(summary["regions"]) == {"A", "B"}
    assert summary["ties"][0]["branch"] == 3

    written = load(tmp_path / "manifest.json")
    assert written["mode"] == "central"
    assert written["config"] == json.loads(json.dumps(AdmmConfig()._asdict()))
    assert written["version"] == "0.1.0"


def test11_missing_case(tmp_path):
    manifest = RunManifest(case=str(tmp_path / "nowhere.yaml"), out=tmp_path)
    assert cmd_solve(manifest) == 3
    error = load(tmp_path / "error.json")
    assert error["error_class"] == "parse"
    assert "nowhere.yaml" in error["message"]


def test12_invalid_manifest(tmp_path):
    manifest = RunManifest(case=datafile("two_bus.yaml"), mode="hybrid", out=tmp_path)
    assert cmd_solve(manifest) == 4
    manifest = RunManifest(
        case=datafile("two_bus.yaml"),
        config=AdmmConfig(transport="socket"),
        out=tmp_path,
    )
    assert cmd_solve(manifest) == 4


def test13_no_convergence_is_reproducible(tmp_path):
    traces = []
    for k in range(2):
        out = tmp_path / str(k)
        manifest = RunManifest(
            case=datafile("fifteen_bus_3r.yaml"),
            mode="distributed",
            config=AdmmConfig(max_iterations=5),
            out=out,
        )
        assert cmd_solve(manifest) == 6
        assert load(out / "error.json")["error_class"] == "no-convergence"
        summary = load(out / "summary.json")
        assert summary["status"] == "max_iter"
        assert summary["iterations"] == 5
        with open(out / "trace.csv", "rb") as f:
            traces.append(f.read())
        with open(out / "timing.csv", newline="") as f:
            assert len(list(csv.reader(f))) == 6
    assert traces[0] == traces[1]
    header = traces[0].decode().splitlines()[0].split(",")
    assert header[:3] == ["iteration", "residual", "objective"]
    assert "rho_C" in header and "mismatch_AC_Vang" in header


def test14_distributed_with_comparison(tmp_path):
    manifest = RunManifest(
        case=datafile("five_bus_2r.yaml"),
        mode="distributed",
        out=tmp_path,
        compare_central=True,
    )
    assert cmd_solve(manifest) == 0
    summary = load(tmp_path / "summary.json")
    assert summary["status"] == "converged"
    assert 0 <= summary["gap"] <= 1e-3
    assert summary["residual"] <= 1e-3
    assert set(summary["comparison"]) >= {"gap", "max_pg"}
    assert load(tmp_path / "partition.json")["consensus_dimension"] == 4


def test20_sweep_grid(tmp_path):
    manifest = RunManifest(
        case=datafile("five_bus_2r.yaml"), mode="distributed", out=tmp_path
    )
    rho_grid, tau_grid = [10.0, 100.0, 1000.0], [1.05, 1.1, 1.5]
    rows = cmd_sweep(manifest, rho_grid, tau_grid, parallel=3)
    assert [(r["rho0"], r["tau"]) for r in rows] == [
        (rho, tau) for rho in rho_grid for tau in tau_grid
    ]
    assert all(row["status"] == "converged" for row in rows)
    assert all(row["gap"] <= 1e-3 for row in rows)
    default = next(r for r in rows if (r["rho0"], r["tau"]) == (100.0, 1.1))
    assert max(row["gap"] for row in rows) >= default["gap"]
    with open(tmp_path / "sweep.csv", newline="", encoding="utf-8") as f:
        written = list(csv.DictReader(f))
    assert tuple(written[0]) == SWEEP_COLUMNS
    assert len(written) == 9


def test21_sweep_rejects_tau(tmp_path):
    manifest = RunManifest(
        case=datafile("five_bus_2r.yaml"), mode="distributed", out=tmp_path
    )
    rows = cmd_sweep(manifest, [100.0], [1.0, 1.1])
    assert [row["status"] for row in rows] == ["config", "converged"]
    assert "tau" in rows[0]["error"]
    assert rows[0]["gap"] == ""


def test22_empty_sweep():
    manifest = RunManifest(case=datafile("five_bus_2r.yaml"), mode="distributed")
    with pytest.raises(ConfigError):
        cmd_sweep(manifest, [], [1.1])


def test30_partition(tmp_path):
    report = cmd_partition(datafile("fifteen_bus_3r.yaml"), tmp_path)
    assert report["consensus_dimension"] == 12
    assert load(tmp_path / "partition.json") == json.loads(json.dumps(report))


def test31_check():
    reports = cmd_check(datafile("acdc_2r.yaml"), points=5)
    assert set(reports) == {
        "central",
        "region:A",
        "region:B",
        "augmented:A",
        "augmented:B",
    }
    assert all(rep.ok(1e-5) for rep in reports.values())
    assert set(cmd_check(datafile("nine_bus.yaml"), points=5)) == {"central"}


def test40_command_line(tmp_path):
    result = runner.invoke(app, ["partition", datafile("five_bus_2r.yaml")])
    assert result.exit_code == 0
    assert '"consensus_dimension": 4' in result.output

    result = runner.invoke(app, ["check", datafile("two_bus.yaml"), "--points", "3"])
    assert result.exit_code == 0

    result = runner.invoke(
        app, ["solve", datafile("two_bus.yaml"), "--out", str(tmp_path / "a")]
    )
    assert result.exit_code == 0
    assert load(tmp_path / "a" / "summary.json")["objective"] == pytest.approx(5000)

    result = runner.invoke(
        app,
        ["solve", datafile("five_bus_2r.yaml"), "--mode", "distributed", "--tau", "1"],
    )
    assert result.exit_code == 4

    result = runner.invoke(app, ["partition", datafile("nine_bus.yaml")])
    assert result.exit_code == 3

    result = runner.invoke(
        app,
        [
            "solve",
            "--case",
            datafile("two_bus.yaml"),
            "--seed",
            "7",
            "--out",
            str(tmp_path / "b"),
        ],
    )
    assert result.exit_code == 0
    assert load(tmp_path / "b" / "manifest.json")["seed"] == 7

    result = runner.invoke(app, ["solve"])
    assert result.exit_code == 2
