"""Experiment orchestration: nominal calibration, N-episode batches per
condition, the ablation matrix and figure-ready aggregates."""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .core import ScaleCalibration, calibrate_scale, innovation_energy
from .errors import ContractViolation
from .monitor import Thresholds, calibrate_thresholds, detection_latency
from .recovery import Mechanism, RecoveryConfig, mttr_a
from .simulator import EpisodeTrace, SimConfig, Variant, run_episode

log = logging.getLogger(__name__)

EPISODE_STREAM = 0
CALIBRATION_STREAM = 1


def episode_seed(master_seed: int, index: int, stream: int = EPISODE_STREAM) -> int:
    """64-bit seed for episode ``index``; identical across conditions."""
    ss = np.random.SeedSequence([int(master_seed), int(stream), int(index)])
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


@dataclass(frozen=True)
class Condition:
    """One row of an experiment: a variant under a scenario.

    ``kind`` is ``"baseline"`` or ``"controller"``; ``drop`` lists recovery
    mechanisms disabled for ablations.
    """

    name: str
    kind: str = "controller"
    scenario: str = "misroute"
    drop: tuple = ()
    overrides: tuple = ()

    def __post_init__(self):
        if self.kind not in ("baseline", "controller"):
            raise ContractViolation(f"condition kind must be baseline or controller, got {self.kind!r}")
        object.__setattr__(self, "drop", tuple(Mechanism(m).value for m in self.drop))
        object.__setattr__(self, "overrides", tuple(sorted(dict(self.overrides).items())))

    def sim_config(self, base: SimConfig) -> SimConfig:
        return base.with_(scenario=self.scenario, **dict(self.overrides))

    def variant(self, base: SimConfig, recovery: RecoveryConfig) -> Variant:
        cfg = self.sim_config(base)
        if self.kind == "baseline":
            return Variant.baseline(cfg, recovery)
        return Variant.ablation(cfg, self.name, self.drop, recovery)


DEFAULT_CONDITIONS: tuple[Condition, ...] = (
    Condition("baseline", kind="baseline"),
    Condition("full_controller"),
    Condition("no_rollback", drop=("rollback",)),
    Condition("no_gain_modulation", drop=("gain_modulation",)),
    Condition("no_tool_fallback", drop=("tool_fallback",)),
    Condition("delayed_evidence", scenario="delayed"),
)


@dataclass(frozen=True)
class ExperimentPlan:
    N: int = 120
    calibration_runs: int = 200
    master_seed: int = 0
    conditions: tuple[Condition, ...] = DEFAULT_CONDITIONS
    sim: SimConfig = field(default_factory=SimConfig)
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)
    p_tau: float = 0.90
    p_tau_d: float = 0.95
    kappa: float = 0.85
    epsilon: float = 1e-6
    scale_mode: str = "variance"
    jobs: int = 1

    def __post_init__(self):
        if self.N < 1:
            raise ContractViolation("N must be >= 1")
        if self.calibration_runs < 10:
            raise ContractViolation("calibration_runs must be >= 10")
        if self.recovery.alpha != self.sim.alpha:
            raise ContractViolation(f"recovery.alpha {self.recovery.alpha} differs from sim.alpha {self.sim.alpha}")
        names = [c.name for c in self.conditions]
        if len(set(names)) != len(names):
            raise ContractViolation("condition names must be unique")

    def condition(self, name: str) -> Condition:
        for c in self.conditions:
            if c.name == name:
                return c
        raise ContractViolation(f"unknown condition {name!r}; known: {[c.name for c in self.conditions]}")


@dataclass(frozen=True)
class Calibration:
    """Scale and thresholds fitted for one variant."""

    variant: str
    gain: float
    scale: ScaleCalibration
    thresholds: Thresholds
    degenerate: bool = False


@dataclass
class Curve:
    mean: list
    std: list


@dataclass
class ConditionSummary:
    name: str
    variant: str
    scenario: str
    n: int
    detections: int
    recoveries: int
    detection_rate: float
    recovery_rate: Optional[float]
    mttr_mean: Optional[float]
    mttr_std: Optional[float]
    latency_mean: Optional[float]
    pre_onset_rate: float
    curves: dict = field(default_factory=dict)
    scatter: list = field(default_factory=list)
    traces: list = field(default_factory=list, repr=False)


# -- episode execution ------------------------------------------------------


def _run_one(args) -> EpisodeTrace:
    cfg, variant, thresholds, scale = args
    return run_episode(cfg, variant, thresholds, scale)


def _map(jobs: int, tasks: list) -> list:
    """Order-preserving map, serial or over a process pool."""
    if jobs <= 1 or len(tasks) < 2:
        return [_run_one(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_run_one, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))


def _calibration_key(cond: Condition, plan: ExperimentPlan) -> tuple:
    v = cond.variant(plan.sim, plan.recovery)
    return (v.name if cond.kind == "baseline" else "controller", v.gain)


_UNBOUNDED = Thresholds(math.inf, math.inf, 0.5)


def run_calibration(plan: ExperimentPlan, variant: Variant) -> Calibration:
    """Fit scale and thresholds from nominal episodes of ``variant``.

    Calibration episodes never trigger control: they run passively with
    unbounded thresholds. Energies are then rescored with the fitted scale.
    """
    cfg0 = plan.sim.with_(scenario="nominal")
    passive = Variant(variant.name, False, variant.gain, variant.recovery)
    provisional = ScaleCalibration(mu_nu=0.0, S=1.0, epsilon=plan.epsilon, dim=cfg0.d)
    tasks = [
        (cfg0.with_(seed=episode_seed(plan.master_seed, i, CALIBRATION_STREAM)), passive, _UNBOUNDED, provisional)
        for i in range(plan.calibration_runs)
    ]
    traces = _map(plan.jobs, tasks)
    nus = [s.nu for tr in traces for s in tr.steps]
    scale = calibrate_scale(nus, epsilon=plan.epsilon, mode=plan.scale_mode, dim=cfg0.d)
    H = cfg0.H
    per_episode = []
    for tr in traces:
        e = [innovation_energy(s.nu, scale) for s in tr.steps]
        per_episode.append([sum(e[j - H + 1 : j + 1]) / H for j in range(H - 1, len(e))])
    thresholds = calibrate_thresholds(per_episode, plan.p_tau, plan.p_tau_d, plan.kappa)
    degenerate = scale.degenerate
    if degenerate:
        log.warning("degenerate calibration for %s: zero innovation spread, S fell back to epsilon", variant.name)
    return Calibration(variant.name, variant.gain, scale, thresholds, degenerate)


def calibrate_all(plan: ExperimentPlan) -> dict[str, Calibration]:
    """One calibration per distinct variant in the plan, keyed by condition name."""
    cache: dict[tuple, Calibration] = {}
    out = {}
    for cond in plan.conditions:
        key = _calibration_key(cond, plan)
        if key not in cache:
            cache[key] = run_calibration(plan, cond.variant(plan.sim, plan.recovery))
        out[cond.name] = cache[key]
    return out


def aggregate_curve(series: Sequence[Sequence[Optional[float]]]) -> Curve:
    """Pointwise mean and population std across episodes; None where no
    episode has a value at that step."""
    T = max((len(s) for s in series), default=0)
    mean, std = [], []
    for j in range(T):
        vals = [s[j] for s in series if j < len(s) and s[j] is not None]
        if not vals:
            mean.append(None)
            std.append(None)
            continue
        m = sum(vals) / len(vals)
        mean.append(m)
        std.append(math.sqrt(sum((v - m) ** 2 for v in vals) / len(vals)))
    return Curve(mean, std)


def summarize(
    name: str, variant: str, scenario: str, traces: Sequence[EpisodeTrace], keep_traces: bool = False
) -> ConditionSummary:
    n = len(traces)
    detected = [tr for tr in traces if tr.detected]
    recovered = [tr for tr in detected if tr.recovered]
    events = [ev for tr in traces for ev in tr.events]
    stats = mttr_a(events)
    lat = [detection_latency(tr.t_0, tr.t_star) for tr in detected]
    curves = {
        key: aggregate_curve([tr.series(attr) for tr in traces])
        for key, attr in (("nu", "nu"), ("energy", "energy"), ("drift_score", "drift_score"), ("semantic_drift", "semantic_drift"))
    }
    scatter = [(tr.steps[-1].drift_score, tr.steps[-1].semantic_drift) for tr in traces]
    return ConditionSummary(
        name=name,
        variant=variant,
        scenario=scenario,
        n=n,
        detections=len(detected),
        recoveries=len(recovered),
        detection_rate=len(detected) / n if n else 0.0,
        recovery_rate=len(recovered) / len(detected) if detected else None,
        mttr_mean=None if stats is None else stats.mean,
        mttr_std=None if stats is None else stats.std,
        latency_mean=sum(lat) / len(lat) if lat else None,
        pre_onset_rate=sum(tr.pre_onset_detection for tr in traces) / n if n else 0.0,
        curves=curves,
        scatter=scatter,
        traces=list(traces) if keep_traces else [],
    )


def run_condition(
    plan: ExperimentPlan, condition: Condition, calibration: Calibration, keep_traces: bool = False
) -> ConditionSummary:
    """Run ``plan.N`` paired-seed episodes of one condition."""
    variant = condition.variant(plan.sim, plan.recovery)
    if calibration.gain != variant.gain:
        raise ContractViolation(
            f"calibration for gain {calibration.gain} does not match variant {variant.name} (gain {variant.gain})"
        )
    cfg = condition.sim_config(plan.sim)
    tasks = [
        (cfg.with_(seed=episode_seed(plan.master_seed, i)), variant, calibration.thresholds, calibration.scale)
        for i in range(plan.N)
    ]
    traces = _map(plan.jobs, tasks)
    return summarize(condition.name, variant.name, cfg.scenario, traces, keep_traces)


def run_ablation(
    plan: ExperimentPlan, calibration_map: Optional[dict[str, Calibration]] = None, keep_traces: bool = False
) -> list[ConditionSummary]:
    """Every condition of the plan (by default the six ablation rows), paired by seed."""
    if calibration_map is None:
        calibration_map = calibrate_all(plan)
    missing = [c.name for c in plan.conditions if c.name not in calibration_map]
    if missing:
        raise ContractViolation(f"missing calibration for {missing}")
    return [run_condition(plan, c, calibration_map[c.name], keep_traces) for c in plan.conditions]
