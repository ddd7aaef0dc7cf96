import json
from dataclasses import replace

import pytest

from drivesafe import cli
from drivesafe.experiment import (
    AttackSetting,
    ExperimentConfig,
    format_table,
    perturbation_sweep,
    planner_comparison,
    run_experiment,
)
from drivesafe.generator import make_scenario
from drivesafe.ingest import read_report, scenario_to_dict
from drivesafe.scenario import Intention


def test_smoke_run():
    res = run_experiment(ExperimentConfig(n_scenarios=10))
    rows = read_report(res.csv)
    assert len(rows) == 3 and res.manifest["errors"] == 0
    for r in res.report.rows:
        assert r.k_dts == 10 and r.errors == 0
        assert abs(r.m_saf - (1 - (r.m_cls or 0.0)) * r.m_suc) < 1e-12


def test_perturbation_sweep_layout():
    res = run_experiment(ExperimentConfig(n_scenarios=8, sweep=perturbation_sweep()))
    rows = read_report(res.csv)
    assert len(rows) == 15
    assert [r["setting"] for r in rows[:5]] == [f"effect-perturb-{n}" for n in range(5)]
    assert {r["intention"] for r in rows} == {"left", "straight", "right"}


def test_same_config_same_bytes(tmp_path):
    cfg = ExperimentConfig(n_scenarios=12, sweep=(AttackSetting(), AttackSetting("effect-perturb", level=3)))
    a = run_experiment(replace(cfg, out_dir=str(tmp_path / "a")))
    b = run_experiment(replace(cfg, out_dir=str(tmp_path / "b"), jobs=2))
    assert (tmp_path / "a" / "report.csv").read_bytes() == (tmp_path / "b" / "report.csv").read_bytes()
    assert a.manifest["config_sha256"] == b.manifest["config_sha256"]
    man = json.loads((tmp_path / "a" / "manifest.json").read_text())
    assert man["seed"] == 0 and "numpy" in man["versions"] and man["report_sha256"] == a.manifest["report_sha256"]


def test_collisions_judged_against_ground_truth():
    # an undetected car straight ahead: planning sees an empty road, evaluation does not
    s = make_scenario(0, 0)
    doc = scenario_to_dict(s)
    doc["objects"] = [{"x": 12.0, "y": 0.0, "l": 4.0, "w": 1.7, "h": 1.5}]
    doc["frames"] = []
    cfg = ExperimentConfig(n_scenarios=1, scenario_docs=(doc,), intentions=(Intention.STRAIGHT,), detector="gt")
    base = run_experiment(cfg).report.rows[0]
    assert base.k_cls == 0  # ground truth passthrough plans around it
    blind = AttackSetting("effect-perturb", level=0, name="blind")
    from drivesafe import experiment as X

    orig = X._observe
    try:
        X._observe = lambda *a, **k: []
        row = run_experiment(replace(cfg, sweep=(blind,))).report.rows[0]
    finally:
        X._observe = orig
    assert row.k_trj == 1 and row.k_cls == 1 and row.m_saf == 0.0


def test_failures_are_recorded_not_raised(monkeypatch):
    from drivesafe import experiment as X

    def boom(*a, **k):
        raise RuntimeError("x")

    monkeypatch.setattr(X, "plan", boom)
    res = run_experiment(ExperimentConfig(n_scenarios=3, intentions=("left",)))
    row = res.report.rows[0]
    assert row.errors == 3 and row.k_trj == 0 and res.manifest["errors"] == 3


def test_config_validation():
    with pytest.raises(ValueError):
        ExperimentConfig(n_scenarios=0)
    with pytest.raises(ValueError):
        ExperimentConfig(sweep=(AttackSetting(), AttackSetting()))
    with pytest.raises(ValueError):
        ExperimentConfig(detector="lidar")
    with pytest.raises(ValueError):
        AttackSetting("laser")


def test_setting_labels():
    assert AttackSetting().label == "none"
    assert AttackSetting("pgd").label == "pgd-a0.1-e0.1-n10"
    assert AttackSetting("effect-patch", placement="specific", region="left").label == "effect-patch-specific-left"
    assert AttackSetting("effect-patch", placement="specific").placement_region(Intention.RIGHT) is Intention.RIGHT


def test_pgd_setting_runs_on_surrogate():
    cfg = ExperimentConfig(n_scenarios=2, intentions=("straight",), sweep=(AttackSetting(), AttackSetting("pgd", iters=2)))
    res = run_experiment(cfg)
    assert len(res.report.rows) == 2 and res.manifest["errors"] == 0
    assert "theta_sha256" in res.manifest["artifacts"]


def test_patch_setting_with_shipped_patch(tmp_path):
    import numpy as np

    from drivesafe.attacks.patch import save_patch

    p = np.random.default_rng(0).uniform(0, 255, (33, 33, 3))
    save_patch(tmp_path / "p.ppm", p, {})
    cfg = ExperimentConfig(
        n_scenarios=2, intentions=("left",), patch_path=str(tmp_path / "p.ppm"),
        sweep=(AttackSetting("patch", placement="specific"),),
    )
    res = run_experiment(cfg)
    assert res.manifest["errors"] == 0 and "patch_sha256" in res.manifest["artifacts"]


def test_planner_comparison_table():
    rows = planner_comparison(ExperimentConfig(n_scenarios=6))
    assert {r["algo"] for r in rows} == {"astar", "gbfs"} and len(rows) == 6
    text = format_table(rows, ["algo", "intention", "m_saf", "mean_expanded"])
    assert text.splitlines()[0].split() == ["algo", "intention", "m_saf", "mean_expanded"]


# --- command line ---------------------------------------------------------


def test_cli_writes_outputs(tmp_path, capsys):
    code = cli.main(["--n-scenarios", "4", "--out", str(tmp_path), "--intention", "left", "--attack", "effect-patch", "--placement", "specific"])
    assert code == 0
    rows = read_report((tmp_path / "report.csv").read_text())
    assert [r["setting"] for r in rows] == ["none", "effect-patch-specific"]
    assert json.loads((tmp_path / "manifest.json").read_text())["n_scenarios"] == 4


def test_cli_stdout_and_verbose(capsys):
    assert cli.main(["--n-scenarios", "3", "--intention", "straight", "--verbose"]) == 0
    out, err = capsys.readouterr()
    assert out.startswith("intention,setting") and "mean expanded nodes" in err


def test_cli_config_file_and_override(tmp_path, capsys):
    s = make_scenario(1, 2)
    (tmp_path / "s.json").write_text(json.dumps(scenario_to_dict(s)))
    (tmp_path / "cfg.json").write_text(json.dumps({"seed": 5, "scenarios": ["s.json"], "algo": "gbfs"}))
    assert cli.main(["--config", str(tmp_path / "cfg.json"), "--algo", "astar", "--out", str(tmp_path / "o")]) == 0
    man = json.loads((tmp_path / "o" / "manifest.json").read_text())
    assert man["config"]["algo"] == "astar" and man["seed"] == 5 and man["n_scenarios"] == 1


def test_cli_exit_codes(tmp_path, capsys):
    assert cli.main(["--n-scenarios", "0"]) == 2
    (tmp_path / "bad.json").write_text("{")
    assert cli.main(["--config", str(tmp_path / "bad.json")]) == 2
    (tmp_path / "unknown.json").write_text('{"colour": 1}')
    assert cli.main(["--config", str(tmp_path / "unknown.json")]) == 2
    (tmp_path / "invalid.json").write_text(json.dumps({"scenarios": [{"id": "x"}]}))
    assert cli.main(["--config", str(tmp_path / "invalid.json")]) == 2
    assert cli.main(["--config", str(tmp_path / "missing.json")]) == 3
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert cli.main(["--n-scenarios", "1", "--out", str(blocker / "sub")]) == 3
    with pytest.raises(SystemExit) as e:
        cli.main(["--attack", "nope"])
    assert e.value.code == 2
