"""End-to-end runs of the command line, in process via ``main(argv)``.

A small one-year instance is generated once per module and shared; commands
that only need to fail fast get their own scratch directories.
"""

import csv
import datetime
import json

import pytest

from helios.cli import main
from helios.io import load_plan

PNG_MAGIC = b"\x89PNG"


def run(*argv) -> int:
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    base = tmp_path_factory.mktemp("cli")
    inst = base / "inst"
    assert run("generate", "--out-dir", inst, "--years", "1", "--seed", "7",
               "--demand-scale", "1e-3", "--budget", "30000") == 0
    assert run("reduce", "--out-dir", inst, "--dataset", inst,
               "--k", "3", "--seed", "1") == 0
    plan_dir = base / "plan-run"
    assert run("plan", "--instance", inst, "--out-dir", plan_dir) == 0
    return inst, plan_dir


def manifest_of(directory) -> dict:
    return json.loads((directory / "run-manifest.json").read_text())


def test_generate_writes_instance_and_manifest(tmp_path, capsys):
    out = tmp_path / "fresh"
    assert run("generate", "--out-dir", out, "--years", "1", "--seed", "2",
               "--demand-scale", "1e-3") == 0
    for name in ("instance.json", "demand.csv", "capacity_factors.csv",
                 "generator.json"):
        assert (out / name).exists(), name
    manifest = manifest_of(out)
    assert manifest["command"] == "generate"
    assert manifest["settings"]["seed"] == 2
    assert set(manifest["versions"]) >= {"helios", "python", "numpy", "scipy",
                                         "matplotlib"}
    datetime.datetime.fromisoformat(manifest["created"])
    assert "wrote instance" in capsys.readouterr().out


def test_reduce_bundles_scenarios_with_the_instance(workspace):
    inst, _ = workspace
    assert (inst / "scenarios.json").exists()
    rows = list(csv.reader(open(inst / "weights.csv")))
    assert rows[0][:2] == ["scenario", "mean_capacity_factor"]
    assert len(rows) == 1 + 3
    # each month's weights form a distribution over the scenarios
    for m in range(2, 14):
        assert sum(float(r[m]) for r in rows[1:]) == pytest.approx(1.0,
                                                                   abs=1e-6)
    # reduce ran last in this directory, so the manifest records it
    assert manifest_of(inst)["command"] == "reduce"
    assert manifest_of(inst)["settings"]["k"] == 3


def test_plan_writes_reports_and_figures(workspace):
    inst, plan_dir = workspace
    doc = json.loads((plan_dir / "plan.json").read_text())
    assert doc["status"] == "optimal"
    assert doc["npv"] is not None
    assert "schedule" not in doc

    plan = load_plan(plan_dir / "investment.json")
    assert plan.solar_kw.shape == (5, 1)

    rows = list(csv.reader(open(plan_dir / "investment.csv")))
    assert rows[0] == ["site", "year", "battery_kwh", "solar_kw"]
    assert len(rows) == 1 + 5

    figure = (plan_dir / "plan_investment.png").read_bytes()
    assert figure[:4] == PNG_MAGIC

    manifest = manifest_of(plan_dir)
    assert manifest["command"] == "plan"
    assert manifest["settings"]["budget"] == 30000.0


def test_plan_at_zero_budget_reports_zero_npv(workspace, tmp_path, capsys):
    inst, _ = workspace
    out = tmp_path / "zero"
    assert run("plan", "--instance", inst, "--out-dir", out,
               "--budget", "0") == 0
    doc = json.loads((out / "plan.json").read_text())
    assert doc["npv"] == 0.0
    assert doc["plan"]["solar_kw"] == [[0.0]] * 5
    assert "NPV 0.00" in capsys.readouterr().out


def test_plan_without_scenarios_fails_cleanly(tmp_path, capsys):
    out = tmp_path / "bare"
    assert run("generate", "--out-dir", out, "--years", "1", "--seed", "2",
               "--demand-scale", "1e-3") == 0
    capsys.readouterr()
    assert run("plan", "--instance", out, "--out-dir", tmp_path / "r") == 1
    err = capsys.readouterr().err
    assert err.startswith("error: E_VALIDATION:")
    assert "helios reduce" in err


def test_usage_errors_exit_with_code_1(capsys):
    for argv in ([], ["frobnicate"], ["plan", "--bogus"]):
        with pytest.raises(SystemExit) as exc:
            main(argv)
        assert exc.value.code == 1
        assert "error: E_USAGE:" in capsys.readouterr().err


def test_missing_instance_directory_is_an_io_error(tmp_path, capsys):
    assert run("plan", "--instance", tmp_path / "nowhere",
               "--out-dir", tmp_path / "out") == 1
    assert capsys.readouterr().err.startswith("error: E_IO:")


def test_config_file_fills_in_flags(workspace, tmp_path):
    inst, _ = workspace
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"k": 2, "seed": 3}))
    r1 = tmp_path / "r1"
    assert run("reduce", "--config", cfg, "--dataset", inst,
               "--out-dir", r1) == 0
    assert manifest_of(r1)["settings"] == {"dataset": str(inst), "k": 2,
                                           "seed": 3}
    r2 = tmp_path / "r2"
    assert run("reduce", "--config", cfg, "--dataset", inst,
               "--out-dir", r2, "--k", "4") == 0
    settings = manifest_of(r2)["settings"]
    assert settings["k"] == 4      # explicit flag beats the file
    assert settings["seed"] == 3   # file beats the built-in default


def test_config_must_be_an_object(workspace, tmp_path, capsys):
    inst, _ = workspace
    cfg = tmp_path / "cfg.json"
    cfg.write_text("[1, 2]")
    assert run("reduce", "--config", cfg, "--dataset", inst,
               "--out-dir", tmp_path / "r") == 1
    assert "must be a JSON object" in capsys.readouterr().err


def test_replay_writes_the_hourly_table(workspace, tmp_path, capsys):
    inst, plan_dir = workspace
    out = tmp_path / "replay"
    assert run("replay", "--instance", inst,
               "--plan", plan_dir / "investment.json",
               "--scenario", "1", "--month", "2", "--out-dir", out) == 0
    rows = list(csv.reader(open(out / "replay.csv")))
    assert len(rows) == 1 + 24
    assert rows[0][0] == "hour" and rows[0][1] == "cost"
    assert any(col.startswith("buy_onee[") for col in rows[0])
    assert (out / "replay_day.png").read_bytes()[:4] == PNG_MAGIC
    manifest = manifest_of(out)
    assert manifest["settings"]["scenario"] == 1
    assert manifest["settings"]["month"] == 2
    assert "day cost" in capsys.readouterr().out


def test_replay_checks_argument_ranges(workspace, tmp_path, capsys):
    inst, plan_dir = workspace
    plan = plan_dir / "investment.json"
    out = tmp_path / "r"
    cases = (("--month", "13", "--month is 1..12"),
             ("--year", "2", "--year is 1..1"),
             ("--scenario", "7", "--scenario is 0..2"))
    for flag, value, message in cases:
        assert run("replay", "--instance", inst, "--plan", plan,
                   "--out-dir", out, flag, value) == 1
        err = capsys.readouterr().err
        assert err.startswith("error: E_VALIDATION:")
        assert message in err


def test_sweep_writes_tables_and_figures(workspace, tmp_path, capsys):
    inst, _ = workspace
    out = tmp_path / "sweep"
    assert run("sweep", "--instance", inst, "--budgets", "0,30000",
               "--out-dir", out) == 0
    rows = list(csv.reader(open(out / "sweep.csv")))
    assert len(rows) == 1 + 2
    doc = json.loads((out / "sweep.json").read_text())
    assert doc["points"][0]["npv"] == 0.0
    for name in ("sweep_cost", "sweep_npv", "sweep_emissions", "sweep_mix"):
        assert (out / f"{name}.png").read_bytes()[:4] == PNG_MAGIC, name
    assert "swept 2 budgets" in capsys.readouterr().out


def test_sweep_solver_failure_exits_2(workspace, tmp_path, capsys,
                                      monkeypatch):
    inst, _ = workspace
    monkeypatch.setenv("HELIOS_SOLVER", "nosuch")
    assert run("sweep", "--instance", inst, "--budgets", "0,30000",
               "--out-dir", tmp_path / "s") == 2
    assert capsys.readouterr().err.startswith("error: E_SOLVER:")


def test_crossval_reports_the_selection(workspace, tmp_path, capsys):
    inst, _ = workspace
    out = tmp_path / "cv"
    assert run("crossval", "--instance", inst, "--dataset", inst,
               "--train", "2", "--validation", "1", "--test", "1",
               "--reps", "1", "--k", "2", "--gammas", "0,0,0",
               "--deltas", "0,0.05", "--out-dir", out) == 0
    rows = list(csv.reader(open(out / "crossval.csv")))
    assert rows[0][-2:] == ["delta=0", "delta=0.05"]
    doc = json.loads((out / "crossval.json").read_text())
    assert len(doc["selected"]) == 4
    assert len(doc["scores"]) == 2
    for name in ("crossval_cost", "crossval_co2"):
        assert (out / f"{name}.png").read_bytes()[:4] == PNG_MAGIC, name
    assert manifest_of(out)["settings"]["grid"] == [[0, 0, 0, 0],
                                                    [0, 0, 0, 0.05]]
    assert "selected gamma=" in capsys.readouterr().out
