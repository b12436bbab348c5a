"""Configuration parsing and on-disk formats (JSON documents, CSV traces).

File layout under an output directory::

    manifest.json                 resolved config, digest, seed, paths
    calibration.json              scale + thresholds per condition
    summary.json                  one record per condition
    traces/<condition>/ep_NNNN.csv
    aggregates/<condition>_curves.csv
    aggregates/<condition>_scatter.csv
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import os
import time
from dataclasses import asdict, fields
from pathlib import Path
from typing import Any, Iterable, Optional

from . import __version__
from .core import ScaleCalibration
from .errors import ConfigError, ContractViolation
from .harness import Calibration, Condition, ConditionSummary, Curve, ExperimentPlan, summarize
from .monitor import Thresholds
from .recovery import Mechanism, RecoveryConfig, RecoveryEvent
from .simulator import SCENARIOS, EpisodeTrace, SimConfig, StepRecord

EPISODE_COLUMNS = ("t", "nu", "energy", "drift_score", "semantic_drift", "event")
CURVE_KEYS = ("nu", "energy", "drift_score", "semantic_drift")

_SIM_FIELDS = {"d", "T", "t_star", "alpha", "alpha_base", "sigma_q", "sigma_r", "delay_k", "theta", "misroute_drift"}
_RECOVERY_FIELDS = {"beta", "gamma_g"}
_MONITOR_FIELDS = {"window", "p_tau", "p_tau_d", "kappa", "epsilon", "scale_mode"}
_TOP_FIELDS = {"N", "calibration_runs", "master_seed", "sim", "recovery", "monitor", "conditions"}
_CONDITION_FIELDS = {"name", "kind", "scenario", "drop", "overrides"}


# -- config -----------------------------------------------------------------


def _num(section: dict, key: str, where: str, default, kind=float):
    v = section.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"expected a number, got {v!r}", f"{where}{key}")
    if kind is int:
        if int(v) != v:
            raise ConfigError(f"expected an integer, got {v!r}", f"{where}{key}")
        return int(v)
    if not math.isfinite(v):
        raise ConfigError("must be finite", f"{where}{key}")
    return float(v)


def _require(cond: bool, field: str, message: str) -> None:
    if not cond:
        raise ConfigError(message, field)


def _check_keys(section: Any, allowed: set, where: str) -> dict:
    if not isinstance(section, dict):
        raise ConfigError("expected a JSON object", where.rstrip(".") or "<root>")
    unknown = sorted(set(section) - allowed)
    if unknown:
        raise ConfigError(f"unknown field(s) {unknown}", f"{where}{unknown[0]}")
    return section


def plan_from_dict(raw: dict) -> ExperimentPlan:
    """Validate a config mapping and fill every missing field with defaults."""
    raw = _check_keys(raw, _TOP_FIELDS, "")
    sim_raw = _check_keys(raw.get("sim", {}), _SIM_FIELDS, "sim.")
    rec_raw = _check_keys(raw.get("recovery", {}), _RECOVERY_FIELDS, "recovery.")
    mon_raw = _check_keys(raw.get("monitor", {}), _MONITOR_FIELDS, "monitor.")
    sd = SimConfig()

    N = _num(raw, "N", "", 120, int)
    _require(N >= 1, "N", "must be >= 1")
    cal_runs = _num(raw, "calibration_runs", "", 200, int)
    _require(cal_runs >= 10, "calibration_runs", "must be >= 10")
    seed = _num(raw, "master_seed", "", 0, int)
    _require(0 <= seed < 2**64, "master_seed", "must be an unsigned 64-bit integer")

    window = _num(mon_raw, "window", "monitor.", 3, int)
    _require(window >= 1, "monitor.window", "window length H must be >= 1")
    p_tau = _num(mon_raw, "p_tau", "monitor.", 0.90)
    p_tau_d = _num(mon_raw, "p_tau_d", "monitor.", 0.95)
    _require(0 < p_tau < 1, "monitor.p_tau", "must lie in (0, 1)")
    _require(0 < p_tau_d < 1, "monitor.p_tau_d", "must lie in (0, 1)")
    _require(p_tau <= p_tau_d, "monitor.p_tau", "must not exceed p_tau_d")
    kappa = _num(mon_raw, "kappa", "monitor.", 0.85)
    _require(0 < kappa < 1, "monitor.kappa", "must lie in (0, 1)")
    eps = _num(mon_raw, "epsilon", "monitor.", 1e-6)
    _require(eps > 0, "monitor.epsilon", "must be > 0")
    mode = mon_raw.get("scale_mode", "variance")
    _require(mode in ("variance", "second_moment"), "monitor.scale_mode", "must be 'variance' or 'second_moment'")

    sim_kwargs = {}
    for key in sorted(_SIM_FIELDS):
        kind = int if key in ("d", "T", "t_star", "delay_k") else float
        sim_kwargs[key] = _num(sim_raw, key, "sim.", getattr(sd, key), kind)
    _require(sim_kwargs["d"] >= 2, "sim.d", "must be >= 2")
    _require(sim_kwargs["T"] >= 2, "sim.T", "must be >= 2")
    _require(1 <= sim_kwargs["t_star"] < sim_kwargs["T"], "sim.t_star", "need 1 <= t_star < T")
    _require(window <= sim_kwargs["T"], "monitor.window", "must not exceed T")
    for key in ("alpha", "alpha_base"):
        _require(0 < sim_kwargs[key] <= 1, f"sim.{key}", "must lie in (0, 1]")
    for key in ("sigma_q", "sigma_r"):
        _require(sim_kwargs[key] >= 0, f"sim.{key}", "must be >= 0")
    _require(sim_kwargs["delay_k"] >= 1, "sim.delay_k", "must be >= 1")
    sim = SimConfig(H=window, **sim_kwargs)

    beta = _num(rec_raw, "beta", "recovery.", 0.20)
    _require(0 <= beta <= 1, "recovery.beta", "must lie in [0, 1]")
    gamma_g = _num(rec_raw, "gamma_g", "recovery.", RecoveryConfig().gamma_g)
    _require(0 < gamma_g <= 1, "recovery.gamma_g", "must lie in (0, 1]")
    recovery = RecoveryConfig(alpha=sim.alpha, beta=beta, gamma_g=gamma_g)

    conditions = _parse_conditions(raw.get("conditions"), sim)
    try:
        return ExperimentPlan(
            N=N,
            calibration_runs=cal_runs,
            master_seed=seed,
            conditions=conditions,
            sim=sim,
            recovery=recovery,
            p_tau=p_tau,
            p_tau_d=p_tau_d,
            kappa=kappa,
            epsilon=eps,
            scale_mode=mode,
        )
    except ContractViolation as exc:
        raise ConfigError(str(exc), "conditions") from exc


def _parse_conditions(raw, sim: SimConfig):
    from .harness import DEFAULT_CONDITIONS

    if raw is None:
        return DEFAULT_CONDITIONS
    if not isinstance(raw, list) or not raw:
        raise ConfigError("expected a nonempty list", "conditions")
    out = []
    for i, item in enumerate(raw):
        where = f"conditions[{i}]."
        item = _check_keys(item, _CONDITION_FIELDS, where)
        name = item.get("name")
        _require(isinstance(name, str) and name != "", f"{where}name", "expected a nonempty string")
        kind = item.get("kind", "controller")
        _require(kind in ("baseline", "controller"), f"{where}kind", "must be 'baseline' or 'controller'")
        scenario = item.get("scenario", "misroute")
        _require(scenario in SCENARIOS, f"{where}scenario", f"must be one of {list(SCENARIOS)}")
        drop = item.get("drop", [])
        valid = {m.value for m in Mechanism}
        _require(
            isinstance(drop, list) and all(m in valid for m in drop),
            f"{where}drop",
            f"must be a list drawn from {sorted(valid)}",
        )
        overrides = _check_keys(item.get("overrides", {}), _SIM_FIELDS, f"{where}overrides.")
        try:
            sim.with_(**overrides)
        except (ContractViolation, TypeError) as exc:
            raise ConfigError(str(exc), f"{where}overrides") from exc
        out.append(Condition(name, kind, scenario, tuple(drop), tuple(overrides.items())))
    return tuple(out)


def parse_config(path: Optional[str | Path]) -> ExperimentPlan:
    """Load a JSON config file; ``None`` yields the all-defaults plan."""
    if path is None:
        return plan_from_dict({})
    text = Path(path).read_text(encoding="utf-8")
    try:
        raw = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as exc:
        raise ConfigError(f"malformed JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return plan_from_dict(raw)


def resolved_config(plan: ExperimentPlan) -> dict:
    """The fully resolved configuration in the same shape ``plan_from_dict`` accepts."""
    sim = {k: getattr(plan.sim, k) for k in sorted(_SIM_FIELDS)}
    return {
        "N": plan.N,
        "calibration_runs": plan.calibration_runs,
        "master_seed": plan.master_seed,
        "sim": sim,
        "recovery": {"beta": plan.recovery.beta, "gamma_g": plan.recovery.gamma_g},
        "monitor": {
            "window": plan.sim.H,
            "p_tau": plan.p_tau,
            "p_tau_d": plan.p_tau_d,
            "kappa": plan.kappa,
            "epsilon": plan.epsilon,
            "scale_mode": plan.scale_mode,
        },
        "conditions": [
            {
                "name": c.name,
                "kind": c.kind,
                "scenario": c.scenario,
                "drop": list(c.drop),
                "overrides": dict(c.overrides),
            }
            for c in plan.conditions
        ],
    }


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=False) + "\n"


def config_digest(plan: ExperimentPlan) -> str:
    canon = json.dumps(resolved_config(plan), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return path


# -- manifest ---------------------------------------------------------------


def manifest_timestamp() -> str:
    """UTC ISO timestamp; pinned by ``SOURCE_DATE_EPOCH`` when set."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = int(epoch) if epoch else int(time.time())
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime(t))


def emit_manifest(out: Path, plan: ExperimentPlan, command: str, paths: Iterable[str]) -> Path:
    doc = {
        "artifact_version": __version__,
        "command": command,
        "config": resolved_config(plan),
        "config_digest": config_digest(plan),
        "master_seed": plan.master_seed,
        "outputs": sorted(paths),
        "timestamp": manifest_timestamp(),
    }
    return _write_text(out / "manifest.json", _dumps(doc))


def read_manifest(out: Path) -> dict:
    return json.loads((out / "manifest.json").read_text(encoding="utf-8"))


# -- calibration ------------------------------------------------------------


def calibration_to_dict(cal: Calibration) -> dict:
    return {
        "variant": cal.variant,
        "gain": cal.gain,
        "degenerate": cal.degenerate,
        "scale": asdict(cal.scale),
        "thresholds": asdict(cal.thresholds),
    }


def calibration_from_dict(d: dict) -> Calibration:
    return Calibration(
        variant=d["variant"],
        gain=d["gain"],
        scale=ScaleCalibration(**d["scale"]),
        thresholds=Thresholds(**d["thresholds"]),
        degenerate=d["degenerate"],
    )


def emit_calibration(out: Path, plan: ExperimentPlan, cmap: dict[str, Calibration]) -> Path:
    doc = {
        "config_digest": config_digest(plan),
        "conditions": {name: calibration_to_dict(c) for name, c in sorted(cmap.items())},
    }
    return _write_text(out / "calibration.json", _dumps(doc))


def load_calibration(path: Path, plan: Optional[ExperimentPlan] = None) -> Optional[dict[str, Calibration]]:
    """Read persisted calibrations; None when absent or fitted for another config."""
    if not path.exists():
        return None
    doc = json.loads(path.read_text(encoding="utf-8"))
    if plan is not None and doc.get("config_digest") != config_digest(plan):
        return None
    return {name: calibration_from_dict(d) for name, d in doc["conditions"].items()}


# -- traces -----------------------------------------------------------------


def fmt(v: Optional[float]) -> str:
    """Fixed 12-significant-digit rendering; empty string for missing values."""
    if v is None:
        return ""
    return format(float(v), ".12g")


def episode_csv_text(trace: EpisodeTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(EPISODE_COLUMNS)
    for s in trace.steps:
        w.writerow([s.t, fmt(s.nu), fmt(s.energy), fmt(s.drift_score), fmt(s.semantic_drift), s.event or ""])
    return buf.getvalue()


def emit_episode_csv(trace: EpisodeTrace, path: str | Path) -> Path:
    return _write_text(Path(path), episode_csv_text(trace))


def read_episode_csv(path: str | Path, *, variant: str, scenario: str, t_star: int, H: int, seed: int = 0) -> EpisodeTrace:
    """Rebuild a vector-free trace (signals and events) from its CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if tuple(rows[0]) != EPISODE_COLUMNS:
        raise ContractViolation(f"{path}: unexpected header {rows[0]}")
    steps, events = [], []
    for r in rows[1:]:
        t = int(r[0])
        event = r[5] or None
        if event == "drift_detected":
            events.append(RecoveryEvent(t_0=t))
        elif event == "recovery_complete":
            events[-1].t_r = t
        steps.append(
            StepRecord(
                t=t,
                x=None,
                y_hat=None,
                y=None,
                nu=float(r[1]),
                energy=float(r[2]),
                drift_score=float(r[3]) if r[3] else None,
                semantic_drift=float(r[4]),
                event=event,
            )
        )
    return EpisodeTrace(steps, events, variant, scenario, seed, t_star, H)


def trace_path(out: Path, condition: str, index: int) -> Path:
    return out / "traces" / condition / f"ep_{index:04d}.csv"


# -- summaries --------------------------------------------------------------


def curves_csv_text(curves: dict[str, Curve]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["t"] + [f"{k}_{stat}" for k in CURVE_KEYS for stat in ("mean", "std")])
    T = len(curves["nu"].mean)
    for j in range(T):
        row = [j + 1]
        for k in CURVE_KEYS:
            row += [fmt(curves[k].mean[j]), fmt(curves[k].std[j])]
        w.writerow(row)
    return buf.getvalue()


def scatter_csv_text(scatter) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(["episode", "drift_score_T", "semantic_drift_T"])
    for i, (dT, sT) in enumerate(scatter):
        w.writerow([i, fmt(dT), fmt(sT)])
    return buf.getvalue()


def summary_record(s: ConditionSummary, curves_path: str, scatter_path: str) -> dict:
    return {
        "name": s.name,
        "variant": s.variant,
        "scenario": s.scenario,
        "n": s.n,
        "detections": s.detections,
        "recoveries": s.recoveries,
        "det_rate": s.detection_rate,
        "rec_rate": s.recovery_rate,
        "mttr_mean": s.mttr_mean,
        "mttr_std": s.mttr_std,
        "latency_mean": s.latency_mean,
        "pre_onset_rate": s.pre_onset_rate,
        "curves_path": curves_path,
        "scatter_path": scatter_path,
    }


def emit_summary(summaries: list[ConditionSummary], out: str | Path) -> list[str]:
    """Write summary.json plus per-condition curve and scatter CSVs.

    Returns the written paths relative to ``out``.
    """
    if not summaries:
        raise ContractViolation("emit_summary needs at least one summary")
    out = Path(out)
    written, records = [], []
    for s in summaries:
        cpath = f"aggregates/{s.name}_curves.csv"
        spath = f"aggregates/{s.name}_scatter.csv"
        _write_text(out / cpath, curves_csv_text(s.curves))
        _write_text(out / spath, scatter_csv_text(s.scatter))
        written += [cpath, spath]
        records.append(summary_record(s, cpath, spath))
    _write_text(out / "summary.json", _dumps({"conditions": records}))
    return written + ["summary.json"]


def read_summary(out: str | Path) -> list[dict]:
    return json.loads((Path(out) / "summary.json").read_text(encoding="utf-8"))["conditions"]


def summaries_from_traces(out: Path, plan: ExperimentPlan) -> list[ConditionSummary]:
    """Recompute condition summaries from persisted episode CSVs."""
    result = []
    for cond in plan.conditions:
        folder = out / "traces" / cond.name
        if not folder.is_dir():
            continue
        cfg = cond.sim_config(plan.sim)
        variant = cond.variant(plan.sim, plan.recovery)
        traces = [
            read_episode_csv(p, variant=variant.name, scenario=cfg.scenario, t_star=cfg.t_star, H=cfg.H)
            for p in sorted(folder.glob("ep_*.csv"))
        ]
        if traces:
            result.append(summarize(cond.name, variant.name, cfg.scenario, traces))
    return result
