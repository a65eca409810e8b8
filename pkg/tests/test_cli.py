import json
import subprocess
import sys

import pytest

from longlift.cli import main


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


def last_json(out):
    return json.loads(out.strip().splitlines()[-1])


def simulate_events(capsys, tmp_path, users=300, duration=6, seed=4):
    events = tmp_path / "events.csv"
    code, out, _ = run_cli(
        capsys, "simulate", "--output", str(events),
        "--users", str(users), "--duration", str(duration), "--seed", str(seed))
    assert code == 0
    return events, last_json(out)


def test_simulate_then_analyze_round_trip(capsys, tmp_path):
    events, sim_info = simulate_events(capsys, tmp_path)
    assert sim_info["n_users"] == 300
    assert json.loads((tmp_path / "events.csv.truth.json").read_text())["lte"] == 0.0

    report_path = tmp_path / "report.json"
    code, out, err = run_cli(
        capsys, "analyze", "--input", str(events), "--output", str(report_path),
        "--bootstrap", "50", "--seed", "2", "--window", "3")
    info = last_json(out)
    assert code == 0 and info["exit_code"] == 0
    assert not info["unstable"]

    report = json.loads(report_path.read_text())
    assert report["ste"]["method"] == "naive"
    assert report["lte"]["method"] == "MC"
    assert set(report["baselines"]) == {"CCD", "DiD"}
    assert report["seed"] == 2

    curves = (tmp_path / "report.curves.csv").read_text().splitlines()
    assert curves[0] == "mode,t,value,variance,ci_lo,ci_hi"
    modes = {line.split(",")[0] for line in curves[1:]}
    assert {"learning", "effect", "metric_T", "survival_C"} <= modes


def test_analyze_is_deterministic(capsys, tmp_path):
    events, _ = simulate_events(capsys, tmp_path, users=200, duration=5)
    outs = []
    for name in ("r1.json", "r2.json"):
        path = tmp_path / name
        code, _, _ = run_cli(
            capsys, "analyze", "--input", str(events), "--output", str(path),
            "--bootstrap", "50", "--seed", "17")
        assert code == 0
        outs.append(path.read_bytes())
    assert outs[0] == outs[1]


def test_analyze_missing_input_is_flagged(capsys, tmp_path):
    code, out, _ = run_cli(
        capsys, "analyze", "--input", str(tmp_path / "nope.csv"),
        "--output", str(tmp_path / "r.json"), "--seed", "1")
    assert code == 2
    assert last_json(out)["error"]["exit_code"] == 2


def test_analyze_rejects_bad_flags(capsys, tmp_path):
    events, _ = simulate_events(capsys, tmp_path, users=50, duration=4)
    code, out, _ = run_cli(
        capsys, "analyze", "--input", str(events), "--output", str(tmp_path / "r.json"),
        "--methods", "MC,XyZ", "--seed", "1")
    assert code == 2 and "XyZ" in last_json(out)["error"]["message"]

    code, out, _ = run_cli(
        capsys, "analyze", "--input", str(events), "--output", str(tmp_path / "r.json"),
        "--bootstrap", "10", "--seed", "1")
    assert code == 2


def test_analyze_flags_degraded_runs(capsys, tmp_path):
    # T=3 cannot support the decay fit: report exists but is marked unstable
    events, _ = simulate_events(capsys, tmp_path, users=150, duration=3)
    code, out, _ = run_cli(
        capsys, "analyze", "--input", str(events), "--output", str(tmp_path / "r.json"),
        "--bootstrap", "50", "--seed", "3", "--window", "2")
    info = last_json(out)
    assert code == 3 and info["exit_code"] == 3
    assert info["unstable"]
    assert json.loads((tmp_path / "r.json").read_text())["lte"] is None


def test_simulate_generates_seed_when_missing(capsys, tmp_path):
    code, out, err = run_cli(capsys, "simulate", "--output", str(tmp_path / "e.csv"),
                             "--users", "20", "--duration", "3")
    assert code == 0
    assert "generated seed" in err
    assert isinstance(last_json(out)["seed"], int)


def test_simulate_bad_config_is_input_error(capsys, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"alpha_churn": 5.0}))
    code, out, _ = run_cli(capsys, "simulate", "--config", str(cfg),
                           "--output", str(tmp_path / "e.csv"))
    assert code == 2
    assert "retention" in last_json(out)["error"]["message"]

    cfg.write_text(json.dumps({"warp": 9}))
    code, out, _ = run_cli(capsys, "simulate", "--config", str(cfg),
                           "--output", str(tmp_path / "e.csv"))
    assert code == 2 and "unknown config keys" in last_json(out)["error"]["message"]


def test_bench_cli_runs_tiny_experiment(capsys, tmp_path):
    out_dir = tmp_path / "bench"
    code, out, _ = run_cli(
        capsys, "bench", "--experiment", "table1", "--output", str(out_dir),
        "--sims", "2", "--users", "250", "--seed", "6")
    info = last_json(out)
    assert code == 0
    assert (out_dir / "report.json").exists()
    assert (out_dir / "sims.csv").exists()
    assert info["failures"]["sim"] == 0


def test_bench_requires_experiment_or_spec(capsys, tmp_path):
    code, out, _ = run_cli(capsys, "bench", "--output", str(tmp_path / "x"))
    assert code == 2
    assert "experiment" in last_json(out)["error"]["message"]


def test_bench_spec_file_override(capsys, tmp_path):
    from longlift import table1_spec

    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(table1_spec(n_sims=1, n_users=200, seed=2).to_dict()))
    code, out, _ = run_cli(capsys, "bench", "--spec", str(spec_path),
                           "--output", str(tmp_path / "b"))
    assert code == 0
    report = json.loads((tmp_path / "b" / "report.json").read_text())
    assert report["spec"]["n_sims"] == 1


def test_version_and_usage_exit_codes(capsys):
    assert main(["--version"]) == 0
    assert main(["analyze"]) == 2  # missing required flags


def test_module_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "longlift.cli", "--version"],
        capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0
    assert "longlift" in proc.stdout
