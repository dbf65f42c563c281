import json
import subprocess
import sys
from pathlib import Path

import pytest

from dexter.cli import main


def run_cli(args):
    return main(args)


def test_run_scenario1_exits_zero(tmp_path, capsys):
    log_path = tmp_path / "run.jsonl"
    code = run_cli(["run", "fixtures/scenario1.json", "--runlog", str(log_path)])
    out = capsys.readouterr().out
    assert code == 0
    summary = json.loads(out)
    assert summary["metrics"]["success_rate"] == 1.0
    assert summary["metrics"]["spl"] == 1.0
    assert log_path.exists()
    lines = log_path.read_text().strip().splitlines()
    assert json.loads(lines[0])["kind"] == "run_started"
    assert json.loads(lines[-1])["kind"] == "run_finished"


def test_failure_exit_code(tmp_path, capsys):
    # a mission task type with no capable robot: planning fails, SR < 1
    with open("fixtures/timeline.json") as fh:
        data = json.load(fh)
    data["mock_rules"]["rules"][3]["output"]["strategies"][0]["subtasks"][0][
        "robot_type"
    ] = "submarine"
    bad = tmp_path / "broken.json"
    bad.write_text(json.dumps(data))
    code = run_cli(["run", str(bad)])
    capsys.readouterr()
    assert code == 1


def test_paper_lb_flag_runs(capsys):
    code = run_cli(["run", "fixtures/timeline.json", "--paper-lb"])
    capsys.readouterr()
    assert code == 0


def test_budget_flag_runs(capsys):
    code = run_cli(["run", "fixtures/timeline.json", "--budget-s", "5"])
    capsys.readouterr()
    assert code == 0


def test_timings_recorded_when_asked(tmp_path, capsys):
    log_path = tmp_path / "run.jsonl"
    code = run_cli(
        ["run", "fixtures/timeline.json", "--timings", "--runlog", str(log_path)]
    )
    capsys.readouterr()
    assert code == 0
    records = [json.loads(l) for l in log_path.read_text().splitlines()]
    plans = [r for r in records if r["kind"] == "plan_installed"]
    assert plans and all("plan_time_s" in r for r in plans)


def test_unknown_backend_rejected(capsys):
    code = run_cli(["run", "fixtures/timeline.json", "--backend", "quantum"])
    capsys.readouterr()
    assert code == 2


def test_seed_override_lands_in_log(tmp_path, capsys):
    log_path = tmp_path / "run.jsonl"
    code = run_cli(
        ["run", "fixtures/timeline.json", "--seed", "77", "--runlog", str(log_path)]
    )
    capsys.readouterr()
    assert code == 0
    first = json.loads(log_path.read_text().splitlines()[0])
    assert first["kind"] == "run_started" and first["seed"] == 77


def test_entrypoint_subprocess():
    proc = subprocess.run(
        [sys.executable, "-m", "dexter.cli", "run", "fixtures/scenario2.json"],
        capture_output=True,
        text=True,
        cwd=Path(__file__).resolve().parent.parent,
        timeout=300,
    )
    assert proc.returncode == 0, proc.stderr
    summary = json.loads(proc.stdout)
    assert summary["metrics"]["success_rate"] == 1.0


def test_stats_fixture_file_matches_builder():
    import sys

    sys.path.insert(0, "tests")
    from statsfix import build_stats_scenario

    with open("fixtures/scenario_stats.json") as fh:
        assert json.load(fh) == build_stats_scenario()
