import json
import subprocess
import sys

import numpy as np
import pytest

from agentstab.cli import main
from agentstab.errors import ConfigError
from agentstab.formats import (
    config_digest,
    episode_csv_text,
    fmt,
    parse_config,
    plan_from_dict,
    read_episode_csv,
    read_summary,
    resolved_config,
    summary_record,
)
from agentstab.harness import ConditionSummary, ExperimentPlan
from agentstab.recovery import RecoveryEvent
from agentstab.simulator import EpisodeTrace, StepRecord

TINY = {"N": 4, "calibration_runs": 10, "sim": {"d": 32}}


@pytest.fixture
def tiny_config(tmp_path):
    p = tmp_path / "tiny.json"
    p.write_text(json.dumps(TINY))
    return p


def tree(root):
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


# -- config ------------------------------------------------------------------------------


@pytest.mark.parametrize("text", ["", "{}"])
def test_empty_config_gives_defaults(tmp_path, text):
    p = tmp_path / "c.json"
    p.write_text(text)
    assert parse_config(p) == ExperimentPlan()
    assert parse_config(None) == ExperimentPlan()


@pytest.mark.parametrize(
    "raw,field",
    [
        ({"monitor": {"kappa": 1.2}}, "monitor.kappa"),
        ({"monitor": {"window": 0}}, "monitor.window"),
        ({"N": 0}, "N"),
        ({"N": 2.5}, "N"),
        ({"sim": {"sigma_r": -1}}, "sim.sigma_r"),
        ({"sim": {"bogus": 1}}, "sim.bogus"),
        ({"recovery": {"beta": 1.5}}, "recovery.beta"),
        ({"master_seed": -1}, "master_seed"),
        ({"monitor": {"scale_mode": "median"}}, "monitor.scale_mode"),
    ],
)
def test_invalid_fields_are_named(raw, field):
    with pytest.raises(ConfigError) as info:
        plan_from_dict(raw)
    assert info.value.field == field
    assert field in str(info.value)


def test_malformed_json_reports_position(tmp_path):
    p = tmp_path / "bad.json"
    p.write_text('{\n  "N": 4,\n  oops\n}')
    with pytest.raises(ConfigError, match="line 3"):
        parse_config(p)


def test_resolved_config_round_trip():
    plan = plan_from_dict({"N": 7, "sim": {"sigma_r": 0.3}, "recovery": {"gamma_g": 0.5}})
    again = plan_from_dict(resolved_config(plan))
    assert again == plan
    assert config_digest(again) == config_digest(plan)


# -- episode CSV --------------------------------------------------------------------------------


def two_step_trace():
    z = np.zeros(2)
    steps = [
        StepRecord(1, z, z, z, 0.25, 0.0625, None, 0.0),
        StepRecord(2, z, z, z, 0.5, 0.25, 0.15625, 0.1, event="drift_detected"),
    ]
    return EpisodeTrace(steps, [RecoveryEvent(2)], "full_controller", "misroute", 0, 2, 2)


def test_episode_csv_example():
    text = episode_csv_text(two_step_trace())
    assert text == (
        "t,nu,energy,drift_score,semantic_drift,event\r\n"
        "1,0.25,0.0625,,0,\r\n"
        "2,0.5,0.25,0.15625,0.1,drift_detected\r\n"
    )


def test_episode_csv_reemission_byte_identical(tmp_path):
    p = tmp_path / "ep.csv"
    p.write_bytes(episode_csv_text(two_step_trace()).encode())
    back = read_episode_csv(p, variant="full_controller", scenario="misroute", t_star=2, H=2)
    assert back.steps[0].drift_score is None
    assert [(e.t_0, e.t_r) for e in back.events] == [(2, None)]
    assert episode_csv_text(back).encode() == p.read_bytes()


@pytest.mark.parametrize("v,text", [(None, ""), (0.1, "0.1"), (1 / 3, "0.333333333333"), (1e-20, "1e-20")])
def test_fmt(v, text):
    assert fmt(v) == text


# -- summary records ----------------------------------------------------------------------------------


def test_summary_record_nulls_and_exact_rate():
    s = ConditionSummary("baseline", "baseline", "misroute", 4, 0, 0, 0.0, None, None, None, None, 0.0)
    rec = json.loads(json.dumps(summary_record(s, "c.csv", "s.csv")))
    assert rec["rec_rate"] is None and rec["mttr_mean"] is None and rec["mttr_std"] is None
    s = ConditionSummary("full", "full", "misroute", 4, 3, 1, 0.75, 1 / 3, 4.0, 0.0, 3.0, 0.0)
    rec = json.loads(json.dumps(summary_record(s, "c.csv", "s.csv")))
    assert rec["det_rate"] == 0.75
    assert rec["rec_rate"] == 1 / 3


# -- commands ------------------------------------------------------------------------------------------


def test_unknown_command_exits_nonzero():
    r = subprocess.run([sys.executable, "-m", "agentstab", "frobnicate"], capture_output=True)
    assert r.returncode != 0


def test_config_error_exit_code(tmp_path, capsys):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"monitor": {"kappa": 1.2}}))
    assert main(["calibrate", "--config", str(p), "--out", str(tmp_path / "o")]) == 2
    assert "monitor.kappa" in capsys.readouterr().err


def test_unknown_condition(tmp_path, tiny_config):
    assert main(["run", "--config", str(tiny_config), "--out", str(tmp_path), "--condition", "nope"]) == 2


def test_calibrate_writes_thresholds(tmp_path, tiny_config):
    assert main(["calibrate", "--config", str(tiny_config), "--out", str(tmp_path)]) == 0
    doc = json.loads((tmp_path / "calibration.json").read_text())
    assert set(doc["conditions"]) == {"baseline", "full_controller", "no_rollback", "no_gain_modulation", "no_tool_fallback", "delayed_evidence"}
    th = doc["conditions"]["full_controller"]["thresholds"]
    assert 0 < th["tau"] <= th["tau_d"]


def test_run_twice_identical(tmp_path, tiny_config, monkeypatch):
    monkeypatch.setenv("SOURCE_DATE_EPOCH", "0")
    a, b = tmp_path / "a", tmp_path / "b"
    for out in (a, b):
        assert main(["run", "--config", str(tiny_config), "--out", str(out), "--seed", "3"]) == 0
    assert tree(a) == tree(b)
    assert len(list((a / "traces" / "full_controller").glob("ep_*.csv"))) == 4


def test_env_overrides(tmp_path, tiny_config, monkeypatch):
    monkeypatch.setenv("AGENTSTAB_SEED", "9")
    monkeypatch.setenv("AGENTSTAB_OUT", str(tmp_path / "envout"))
    assert main(["run", "--config", str(tiny_config)]) == 0
    manifest = json.loads((tmp_path / "envout" / "manifest.json").read_text())
    assert manifest["master_seed"] == 9


def test_ablate_and_report(tmp_path, tiny_config):
    assert main(["ablate", "--config", str(tiny_config), "--out", str(tmp_path)]) == 0
    rows = read_summary(tmp_path)
    assert len(rows) == 6
    before = {r["name"]: r for r in rows}
    (tmp_path / "summary.json").unlink()
    assert main(["report", "--out", str(tmp_path)]) == 0
    after = {r["name"]: r for r in read_summary(tmp_path)}
    assert after.keys() == before.keys()
    for name, r in after.items():
        for key in ("n", "detections", "recoveries", "det_rate", "rec_rate", "mttr_mean", "latency_mean"):
            assert r[key] == before[name][key]
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert manifest["command"] == "ablate" and "summary.json" in manifest["outputs"]


def test_report_without_traces(tmp_path, tiny_config):
    assert main(["calibrate", "--config", str(tiny_config), "--out", str(tmp_path)]) == 0
    assert main(["report", "--out", str(tmp_path)]) == 2


def test_report_without_manifest(tmp_path):
    assert main(["report", "--out", str(tmp_path / "missing")]) == 5
