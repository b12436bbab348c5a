"""Synthetic agent loop: unit-vector latent state, evidence scenarios and the
closed monitoring/recovery loop run once per episode.

Geometry
--------
Every episode draws three mutually orthogonal unit vectors: the task intent
``u`` (also the initial state ``x_0``), the misrouted intent ``u_wrong`` and
an auxiliary direction ``u_aux``. Under misrouting the wrong tool keeps
serving a *different* task whose reasoning advances: its evidence center
rotates by ``misroute_drift`` radians per step inside the plane
``(u_wrong, u_aux)``, which is orthogonal to ``u``. The default rate keeps
the full rotation period longer than the post-onset horizon, so the wrong
target never revisits an earlier direction. In the delayed
scenario the true intent itself advances by ``theta`` per step inside the
plane ``(u, u_wrong)``; the agent's transition model follows that progression
and the tool answers with a random staleness of 1..``delay_k`` steps.

Random streams
--------------
Each episode derives independent generators from its seed (intents,
evidence noise, process noise, delay jitter) and draws from each the same
number of values on every step whatever the variant, so paired episodes
differ only where the controller intervenes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Literal, Optional

import numpy as np

from .core import (
    ScaleCalibration,
    cosine_distance_innovation,
    innovation_energy,
    is_unit,
    semantic_drift,
    unit_vector,
)
from .errors import ContractViolation
from .monitor import DriftEvent, MonitorState, Thresholds, evaluate_drift, push_and_score
from .recovery import (
    ControllerState,
    Mechanism,
    RecoveryConfig,
    RecoveryEvent,
    complete_recovery,
    engage_recovery,
    record_snapshot,
)

Scenario = Literal["nominal", "misroute", "delayed"]
SCENARIOS = ("nominal", "misroute", "delayed")


@dataclass(frozen=True)
class SimConfig:
    """Episode dynamics. Noise scales are per coordinate: the evidence noise
    vector has expected norm ``sigma_r * sqrt(d)``."""

    d: int = 512
    T: int = 30
    t_star: int = 5
    H: int = 3
    alpha: float = 0.35
    alpha_base: float = 0.9
    sigma_q: float = 0.0044
    sigma_r: float = 0.221
    scenario: Scenario = "nominal"
    delay_k: int = 5
    theta: float = 0.5
    misroute_drift: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if self.d < 2:
            raise ContractViolation("d must be >= 2")
        if self.H < 1:
            raise ContractViolation("H must be >= 1")
        if not 1 <= self.t_star < self.T:
            raise ContractViolation(f"need 1 <= t_star < T, got t_star={self.t_star}, T={self.T}")
        if self.sigma_q < 0 or self.sigma_r < 0:
            raise ContractViolation("noise scales must be >= 0")
        if not 0 < self.alpha <= 1 or not 0 < self.alpha_base <= 1:
            raise ContractViolation("gains must lie in (0, 1]")
        if self.scenario not in SCENARIOS:
            raise ContractViolation(f"unknown scenario {self.scenario!r}")
        if self.scenario == "delayed" and self.delay_k < 1:
            raise ContractViolation("delay_k must be >= 1 for the delayed scenario")

    def with_(self, **changes) -> "SimConfig":
        return replace(self, **changes)


@dataclass(frozen=True)
class Variant:
    """An agent variant.

    ``controlled=False`` is the baseline: monitor signals are computed and
    detections logged, but no recovery policy exists.
    """

    name: str
    controlled: bool
    gain: float
    recovery: RecoveryConfig = field(default_factory=RecoveryConfig)

    @classmethod
    def baseline(cls, cfg: SimConfig, recovery: Optional[RecoveryConfig] = None) -> "Variant":
        return cls("baseline", False, cfg.alpha_base, recovery or RecoveryConfig(alpha=cfg.alpha))

    @classmethod
    def recovery_aware(
        cls, cfg: SimConfig, recovery: Optional[RecoveryConfig] = None, name: str = "full_controller"
    ) -> "Variant":
        rc = recovery or RecoveryConfig(alpha=cfg.alpha)
        return cls(name, True, rc.alpha, rc)

    @classmethod
    def ablation(
        cls, cfg: SimConfig, name: str, drop: tuple, recovery: Optional[RecoveryConfig] = None
    ) -> "Variant":
        rc = (recovery or RecoveryConfig(alpha=cfg.alpha)).without(*drop)
        return cls(name, True, rc.alpha, rc)


@dataclass(frozen=True)
class IntentPair:
    u: np.ndarray
    u_wrong: np.ndarray
    u_aux: np.ndarray

    def __post_init__(self):
        if abs(float(self.u @ self.u_wrong)) > 0.1:
            raise ContractViolation("intent pair is not near-orthogonal")


def _orthogonalize(v: np.ndarray, basis: list[np.ndarray]) -> np.ndarray:
    for b in basis:
        v = v - float(v @ b) * b
    return v


def generate_intents(rng: np.random.Generator, d: int) -> IntentPair:
    """Uniform task intent plus misrouted/auxiliary directions orthogonal to it."""
    if d < 2:
        raise ContractViolation("d must be >= 2")
    u = unit_vector(rng.standard_normal(d))
    w = unit_vector(_orthogonalize(rng.standard_normal(d), [u]))
    if d >= 3:
        z = unit_vector(_orthogonalize(_orthogonalize(rng.standard_normal(d), [u, w]), [u, w]))
    else:
        z = w.copy()
    return IntentPair(u, w, z)


def _plane_rotate(x: np.ndarray, a: np.ndarray, b: np.ndarray, angle: float) -> np.ndarray:
    """Rotate ``x`` by ``angle`` inside the plane spanned by orthonormal ``a``, ``b``."""
    pa, pb = float(x @ a), float(x @ b)
    c, s = math.cos(angle), math.sin(angle)
    return x + (c * pa - s * pb - pa) * a + (s * pa + c * pb - pb) * b


def predict(x_prev: np.ndarray, intents: Optional[IntentPair] = None, theta: float = 0.0) -> np.ndarray:
    """Predicted latent state (and predicted evidence).

    Identity unless the task intent progresses (``theta != 0``), in which case
    the agent advances its own state along the intent plane.
    """
    if theta == 0.0 or intents is None:
        return x_prev
    return unit_vector(_plane_rotate(x_prev, intents.u, intents.u_wrong, theta))


def intent_at(intents: IntentPair, cfg: SimConfig, t: int) -> np.ndarray:
    """True task intent at step ``t``."""
    if cfg.scenario != "delayed" or cfg.theta == 0.0:
        return intents.u
    a = cfg.theta * t
    return math.cos(a) * intents.u + math.sin(a) * intents.u_wrong


def misroute_path(cfg: SimConfig, intents: IntentPair) -> np.ndarray:
    """Evidence centers of the misrouted tool for steps ``t_star..T``.

    Row ``j`` is the center at step ``t_star + j``: ``u_wrong`` rotated by
    ``j * misroute_drift`` toward ``u_aux``. The plane is orthogonal to ``u``,
    so the wrong evidence never points back at the true intent. With zero
    drift every row is ``u_wrong``.
    """
    n = cfg.T - cfg.t_star + 1
    if cfg.d < 3 or cfg.misroute_drift == 0.0:
        return np.tile(intents.u_wrong, (n, 1))
    j = np.arange(n)[:, None] * cfg.misroute_drift
    return np.cos(j) * intents.u_wrong[None, :] + np.sin(j) * intents.u_aux[None, :]


def evidence_center(
    cfg: SimConfig,
    t: int,
    intents: IntentPair,
    fallback_active: bool,
    lag: int = 0,
    path: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Noise-free direction the tool answers with at step ``t``."""
    if t < cfg.t_star or fallback_active or cfg.scenario == "nominal":
        return intent_at(intents, cfg, t)
    if cfg.scenario == "misroute":
        return intents.u_wrong if path is None else path[t - cfg.t_star]
    return intent_at(intents, cfg, t - lag)


def emit_evidence(
    cfg: SimConfig,
    t: int,
    intents: IntentPair,
    fallback_active: bool,
    rng: np.random.Generator,
    delay_rng: Optional[np.random.Generator] = None,
    path: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Noisy unit evidence vector returned by the tool at step ``t``.

    Without ``delay_rng`` the delayed scenario uses a fixed lag of
    ``delay_k``; with it the lag is drawn uniformly from ``1..delay_k``.
    """
    if not 1 <= t <= cfg.T:
        raise ContractViolation(f"step {t} outside 1..{cfg.T}")
    lag = int(delay_rng.integers(1, cfg.delay_k + 1)) if delay_rng is not None else cfg.delay_k
    noise = rng.standard_normal(cfg.d)
    center = evidence_center(cfg, t, intents, fallback_active, lag, path)
    if cfg.sigma_r == 0.0:
        return np.array(center, dtype=float) if is_unit(center) else unit_vector(center)
    return unit_vector(center + cfg.sigma_r * noise)


def update_state(
    x: np.ndarray, y: np.ndarray, gain: float, sigma_q: float, rng: Optional[np.random.Generator]
) -> np.ndarray:
    """EMA blend toward the evidence plus process noise, renormalized."""
    if not 0 <= gain <= 1:
        raise ContractViolation(f"gain must lie in [0, 1], got {gain!r}")
    w = rng.standard_normal(x.shape[0]) if rng is not None else None
    if gain == 1.0 and sigma_q == 0.0:
        return np.array(y, dtype=float)
    if sigma_q == 0.0 and (gain == 0.0 or np.array_equal(x, y)):
        return np.array(x, dtype=float)
    v = (1.0 - gain) * x + gain * y
    if sigma_q > 0.0:
        v = v + sigma_q * w
    return unit_vector(v)


@dataclass
class StepRecord:
    t: int
    x: np.ndarray
    y_hat: np.ndarray
    y: np.ndarray
    nu: float
    energy: float
    drift_score: Optional[float]
    semantic_drift: float
    event: Optional[str] = None
    fallback_active: bool = False
    gain: float = 0.0


@dataclass
class EpisodeTrace:
    steps: list[StepRecord]
    events: list[RecoveryEvent]
    variant: str
    scenario: str
    seed: int
    t_star: int
    H: int

    @property
    def detected(self) -> bool:
        return bool(self.events)

    @property
    def t_0(self) -> Optional[int]:
        return self.events[0].t_0 if self.events else None

    @property
    def recovered(self) -> bool:
        return any(ev.t_r is not None for ev in self.events)

    @property
    def t_r(self) -> Optional[int]:
        for ev in self.events:
            if ev.t_r is not None:
                return ev.t_r
        return None

    @property
    def pre_onset_detection(self) -> bool:
        return self.t_0 is not None and self.t_0 < self.t_star

    def series(self, name: str) -> list:
        return [getattr(s, name) for s in self.steps]


def episode_streams(seed: int) -> dict[str, np.random.Generator]:
    """Independent generators for one episode, derived from its seed."""
    ss = np.random.SeedSequence(seed)
    names = ("intents", "evidence", "process", "delay")
    return {n: np.random.default_rng(s) for n, s in zip(names, ss.spawn(len(names)))}


def run_episode(
    cfg: SimConfig,
    variant: Variant,
    thresholds: Thresholds,
    cal: ScaleCalibration,
    intents: Optional[IntentPair] = None,
    tau_snapshot: Optional[float] = None,
) -> EpisodeTrace:
    """Run one closed-loop episode of ``cfg.T`` steps.

    Each step: predict, observe, innovation, energy, window score, event
    handling, state update. On detection a controlled variant applies its
    recovery mechanisms to the previous state before the update; the update
    always runs, with whatever gain is active.
    """
    if cal.dim is not None and cal.dim != cfg.d:
        raise ContractViolation(f"calibration was fitted for d={cal.dim}, episode has d={cfg.d}")
    streams = episode_streams(cfg.seed)
    if intents is None:
        intents = generate_intents(streams["intents"], cfg.d)
    elif intents.u.shape[0] != cfg.d:
        raise ContractViolation("intent dimension does not match cfg.d")
    tau = thresholds.tau if tau_snapshot is None else tau_snapshot
    theta = cfg.theta if cfg.scenario == "delayed" else 0.0
    path = misroute_path(cfg, intents) if cfg.scenario == "misroute" else None

    x0 = intents.u
    x = x0
    monitor = MonitorState.new(cfg.H)
    ctl = ControllerState.initial(variant.recovery, snapshot=x0)
    ctl.active_gain = variant.gain
    passive_log: list[RecoveryEvent] = []
    steps: list[StepRecord] = []

    for t in range(1, cfg.T + 1):
        x_hat = predict(x, intents, theta)
        y = emit_evidence(cfg, t, intents, ctl.fallback_active, streams["evidence"], streams["delay"], path)
        nu = cosine_distance_innovation(x_hat, y)
        e = innovation_energy(nu, cal)
        D = push_and_score(monitor, e)
        event = None
        if D is not None:
            event = evaluate_drift(D, thresholds, monitor, t, can_recover=variant.controlled)
        if event is DriftEvent.DETECTED:
            if variant.controlled:
                x_hat, ctl = engage_recovery(x_hat, ctl, variant.recovery, t)
            else:
                passive_log.append(RecoveryEvent(t_0=t))
        elif event is DriftEvent.RECOVERED:
            ctl = complete_recovery(ctl, variant.recovery, t)
            ctl.active_gain = variant.gain
        x = update_state(x_hat, y, ctl.active_gain, cfg.sigma_q, streams["process"])
        if variant.controlled:
            record_snapshot(ctl, x, D, tau)
        steps.append(
            StepRecord(
                t=t,
                x=x,
                y_hat=x_hat,
                y=y,
                nu=nu,
                energy=e,
                drift_score=D,
                semantic_drift=semantic_drift(x, x0),
                event=None if event is None else event.value,
                fallback_active=ctl.fallback_active,
                gain=ctl.active_gain,
            )
        )

    events = ctl.events if variant.controlled else passive_log
    return EpisodeTrace(
        steps=steps,
        events=[RecoveryEvent(ev.t_0, ev.t_r) for ev in events],
        variant=variant.name,
        scenario=cfg.scenario,
        seed=cfg.seed,
        t_star=cfg.t_star,
        H=cfg.H,
    )
