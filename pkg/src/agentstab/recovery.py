"""Recovery policy (rollback, gain modulation, tool fallback) and MTTR-A
bookkeeping."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, NamedTuple, Optional

import numpy as np

from .core import unit_vector
from .errors import ContractViolation


class Mechanism(str, enum.Enum):
    ROLLBACK = "rollback"
    GAIN_MODULATION = "gain_modulation"
    TOOL_FALLBACK = "tool_fallback"


ALL_MECHANISMS: FrozenSet[Mechanism] = frozenset(Mechanism)


@dataclass(frozen=True)
class RecoveryConfig:
    alpha: float = 0.35
    beta: float = 0.20
    gamma_g: float = 0.125
    mechanisms: FrozenSet[Mechanism] = ALL_MECHANISMS

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ContractViolation(f"alpha must lie in (0, 1], got {self.alpha!r}")
        if not 0 <= self.beta <= 1:
            raise ContractViolation(f"beta must lie in [0, 1], got {self.beta!r}")
        if not 0 < self.gamma_g <= 1:
            raise ContractViolation(f"gamma_g must lie in (0, 1], got {self.gamma_g!r}")
        object.__setattr__(self, "mechanisms", frozenset(Mechanism(m) for m in self.mechanisms))

    def without(self, *mechs: Mechanism | str) -> "RecoveryConfig":
        drop = {Mechanism(m) for m in mechs}
        return RecoveryConfig(self.alpha, self.beta, self.gamma_g, self.mechanisms - drop)


@dataclass
class RecoveryEvent:
    t_0: int
    t_r: Optional[int] = None

    @property
    def recovered(self) -> bool:
        return self.t_r is not None

    @property
    def duration(self) -> Optional[int]:
        return None if self.t_r is None else self.t_r - self.t_0


@dataclass
class ControllerState:
    """Per-episode controller state. ``events`` is the append-only log."""

    mode: str = "off"
    active_gain: float = 0.35
    stable_snapshot: Optional[np.ndarray] = None
    fallback_active: bool = False
    events: list[RecoveryEvent] = field(default_factory=list)

    @classmethod
    def initial(cls, cfg: RecoveryConfig, snapshot: Optional[np.ndarray] = None) -> "ControllerState":
        return cls(active_gain=cfg.alpha, stable_snapshot=None if snapshot is None else np.array(snapshot, dtype=float))

    @property
    def recovering(self) -> bool:
        return self.mode == "on"

    @property
    def open_event(self) -> Optional[RecoveryEvent]:
        if self.events and self.events[-1].t_r is None:
            return self.events[-1]
        return None


def record_snapshot(state: ControllerState, x: np.ndarray, D: Optional[float], tau: float) -> ControllerState:
    """Store ``x`` as the rollback target when the loop is calm.

    A state is eligible while recovery is off and the drift score is absent
    (window still filling) or at most ``tau``.
    """
    if state.mode == "off" and (D is None or D <= tau):
        state.stable_snapshot = np.array(x, dtype=float)
    return state


def engage_recovery(
    x: np.ndarray, state: ControllerState, cfg: RecoveryConfig, t_0: int
) -> tuple[np.ndarray, ControllerState]:
    """Apply every enabled mechanism in order rollback, gain, fallback."""
    if state.mode != "off":
        raise ContractViolation("recovery is already engaged")
    x = np.asarray(x, dtype=float)
    if Mechanism.ROLLBACK in cfg.mechanisms and state.stable_snapshot is not None:
        if cfg.beta == 1.0:
            x = np.array(state.stable_snapshot, dtype=float)
        elif cfg.beta > 0.0:
            x = unit_vector((1.0 - cfg.beta) * x + cfg.beta * state.stable_snapshot)
    if Mechanism.GAIN_MODULATION in cfg.mechanisms:
        state.active_gain = cfg.gamma_g * cfg.alpha
    if Mechanism.TOOL_FALLBACK in cfg.mechanisms:
        state.fallback_active = True
    state.mode = "on"
    state.events.append(RecoveryEvent(t_0=t_0))
    return x, state


def complete_recovery(state: ControllerState, cfg: RecoveryConfig, t_r: int) -> ControllerState:
    if state.mode != "on":
        raise ContractViolation("no recovery in progress")
    ev = state.open_event
    if ev is None:
        raise ContractViolation("recovery is on but no open event exists")
    if t_r < ev.t_0:
        raise ContractViolation(f"t_r ({t_r}) precedes t_0 ({ev.t_0})")
    ev.t_r = t_r
    state.mode = "off"
    state.active_gain = cfg.alpha
    state.fallback_active = False
    return state


class MTTRStats(NamedTuple):
    mean: float
    std: float
    count: int


def mttr_a(events: Iterable[RecoveryEvent]) -> Optional[MTTRStats]:
    """Mean and population std of ``t_r - t_0`` over recovered events.

    Returns None when nothing recovered.
    """
    durations = [ev.t_r - ev.t_0 for ev in events if ev.t_r is not None]
    if not durations:
        return None
    n = len(durations)
    mean = sum(durations) / n
    var = sum((d - mean) ** 2 for d in durations) / n
    return MTTRStats(mean=mean, std=math.sqrt(var), count=n)
