"""Tests for the command-line interface: runs, audits, reruns, exit codes."""

import json

import pytest

from creditband.cli import main

SMALL = {"schema_version": 1, "mode": "global_optimal", "seed": 3, "n": 4,
         "capacity_C": 8.0, "beta": 5.0, "days": 1, "window": 4, "learn_days": 0}

RL = {"schema_version": 1, "mode": "ratelimit",
      "ratelimit": {"R": 2.0, "rtt": 0.06, "schedule_duration": 6.0,
                    "connections": [{"alpha": 1.0}, {"alpha": 0.5}]}}

ARTIFACTS = ("trace.json", "metrics.csv", "report.md", "manifest.json")


def write_config(path, payload):
    path.write_text(json.dumps(payload))
    return str(path)


@pytest.fixture(scope="module")
def global_outputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli-global")
    config = write_config(root / "config.json", SMALL)
    out = root / "run"
    assert main(["--config", config, "--out", str(out)]) == 0
    return config, out


# --------------------------------------------------------------- exit codes

def test_missing_config_file_names_the_path(tmp_path, capsys):
    missing = tmp_path / "nowhere.json"
    assert main(["--config", str(missing)]) == 2
    assert str(missing) in capsys.readouterr().err


def test_unparseable_config_is_a_config_error(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["--config", str(bad)]) == 2
    assert "JSON" in capsys.readouterr().err


def test_unknown_config_field_is_a_config_error(tmp_path, capsys):
    payload = dict(SMALL, turbo=True)
    config = write_config(tmp_path / "config.json", payload)
    assert main(["--config", config]) == 2
    assert "turbo" in capsys.readouterr().err


def test_config_flag_is_required_without_audit_or_rerun(capsys):
    assert main([]) == 2
    assert "--config" in capsys.readouterr().err


def test_missing_manifest_is_a_config_error(tmp_path, capsys):
    assert main(["--rerun", str(tmp_path / "none.json")]) == 2
    assert "none.json" in capsys.readouterr().err


# ------------------------------------------------------------ run artifacts

def test_run_writes_all_artifacts(global_outputs):
    _, out = global_outputs
    for name in ARTIFACTS:
        assert (out / name).is_file(), name


def test_metrics_csv_has_the_documented_columns(global_outputs):
    _, out = global_outputs
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == ("period,mode,jain_inst,jain_cum,total_utility,"
                        "budget_1,budget_2,budget_3,budget_4")
    assert len(lines) == 1 + 12
    assert lines[1].startswith("0,global_optimal,")


def test_report_compares_against_equal_share(global_outputs):
    _, out = global_outputs
    report = (out / "report.md").read_text()
    assert "utility ratio vs equal share" in report
    assert "max ratio" in report


def test_manifest_records_the_run(global_outputs):
    config, out = global_outputs
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config_path"] == config
    assert manifest["mode"] == "global_optimal"
    assert manifest["seed"] == 3
    assert manifest["out_dir"] == str(out)


def test_audit_passes_on_a_fresh_run(global_outputs, capsys):
    _, out = global_outputs
    assert main(["--audit", str(out / "trace.json")]) == 0
    assert "audit passed" in capsys.readouterr().out


def test_rerun_reproduces_metrics_byte_for_byte(global_outputs, tmp_path):
    _, out = global_outputs
    again = tmp_path / "again"
    assert main(["--rerun", str(out / "manifest.json"), "--out", str(again)]) == 0
    assert (again / "metrics.csv").read_bytes() == (out / "metrics.csv").read_bytes()


def test_mode_and_seed_flags_override_the_config(global_outputs, tmp_path):
    config, _ = global_outputs
    out = tmp_path / "equal"
    assert main(["--config", config, "--mode", "equal_share", "--seed", "9",
                 "--out", str(out)]) == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert (manifest["mode"], manifest["seed"]) == ("equal_share", 9)
    report = (out / "report.md").read_text()
    assert "Jain index is 1 in every period" in report


def test_online_report_states_the_recovery_fraction(tmp_path):
    payload = dict(SMALL, mode="online", days=2, learn_days=1)
    config = write_config(tmp_path / "config.json", payload)
    out = tmp_path / "run"
    assert main(["--config", config, "--out", str(out)]) == 0
    report = (out / "report.md").read_text()
    assert "online recovery of the optimum after learning" in report
    assert main(["--audit", str(out / "trace.json")]) == 0


def test_verbose_logging_env_is_accepted(global_outputs, tmp_path, monkeypatch):
    config, _ = global_outputs
    monkeypatch.setenv("CREDITBAND_LOG", "DEBUG")
    out = tmp_path / "log"
    assert main(["--config", config, "--mode", "equal_share",
                 "--out", str(out)]) == 0


# ------------------------------------------------------------------- audits

def test_tampered_trace_fails_the_audit(global_outputs, tmp_path, capsys):
    _, out = global_outputs
    doc = json.loads((out / "trace.json").read_text())
    doc["trace"]["budgets"][3][0] += 0.5
    bad = tmp_path / "tampered.json"
    bad.write_text(json.dumps(doc))
    assert main(["--audit", str(bad)]) == 1
    assert "period 3" in capsys.readouterr().err


def test_audit_of_missing_trace_is_a_config_error(tmp_path, capsys):
    assert main(["--audit", str(tmp_path / "none.json")]) == 2
    assert "none.json" in capsys.readouterr().err


# ---------------------------------------------------------- ratelimit mode

def test_ratelimit_run_round_trips(tmp_path):
    config = write_config(tmp_path / "rl.json", RL)
    out = tmp_path / "run"
    assert main(["--config", config, "--out", str(out)]) == 0
    lines = (out / "metrics.csv").read_text().splitlines()
    assert lines[0] == "time,rate_1,rate_2"
    assert len(lines) == 1 + 60
    report = (out / "report.md").read_text()
    assert "terminal rate error" in report
    assert main(["--audit", str(out / "trace.json")]) == 0


def test_ratelimit_rejects_unknown_settings(tmp_path, capsys):
    payload = dict(RL, ratelimit=dict(RL["ratelimit"], burst=50000))
    config = write_config(tmp_path / "rl.json", payload)
    assert main(["--config", config, "--out", str(tmp_path / "run")]) == 2
    assert "burst" in capsys.readouterr().err


def test_ratelimit_rejects_bad_connections(tmp_path, capsys):
    payload = dict(RL, ratelimit={"connections": [{"alpha": 2.0}]})
    config = write_config(tmp_path / "rl.json", payload)
    assert main(["--config", config, "--out", str(tmp_path / "run")]) == 2
    assert "connection 0" in capsys.readouterr().err


def test_tampered_ratelimit_summary_fails_the_audit(tmp_path, capsys):
    config = write_config(tmp_path / "rl.json", RL)
    out = tmp_path / "run"
    assert main(["--config", config, "--out", str(out)]) == 0
    doc = json.loads((out / "trace.json").read_text())
    doc["summary"]["terminal_rate_error"] = 0.2
    (out / "trace.json").write_text(json.dumps(doc))
    assert main(["--audit", str(out / "trace.json")]) == 1
    assert "terminal rate error" in capsys.readouterr().err
