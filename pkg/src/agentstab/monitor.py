"""Sliding-window drift scoring, threshold calibration and the hysteresis
state machine that turns drift scores into detection/recovery events."""

from __future__ import annotations

import enum
from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence

from .core import nearest_rank
from .errors import CalibrationError, ContractViolation


class SlidingWindow:
    """Fixed-capacity FIFO of the most recent innovation energies."""

    def __init__(self, capacity: int):
        if int(capacity) != capacity or capacity < 1:
            raise ContractViolation(f"window capacity must be a positive integer, got {capacity!r}")
        self.capacity = int(capacity)
        self._buf: deque[float] = deque(maxlen=self.capacity)

    def push(self, value: float) -> None:
        self._buf.append(float(value))

    @property
    def full(self) -> bool:
        return len(self._buf) == self.capacity

    def mean(self) -> float:
        return sum(self._buf) / len(self._buf)

    def values(self) -> list[float]:
        return list(self._buf)

    def __len__(self) -> int:
        return len(self._buf)


@dataclass(frozen=True)
class Thresholds:
    """Detection threshold ``tau``, drift threshold ``tau_d`` and the
    bounded-stability factor ``kappa`` (recovery completes at
    ``D <= kappa * tau_d``)."""

    tau: float
    tau_d: float
    kappa: float = 0.85

    def __post_init__(self):
        if self.tau < 0 or self.tau_d < 0:
            raise ContractViolation("thresholds must be nonnegative")
        if self.tau > self.tau_d:
            raise ContractViolation(f"tau ({self.tau}) must not exceed tau_d ({self.tau_d})")
        if not 0 < self.kappa < 1:
            raise ContractViolation(f"kappa must lie in (0, 1), got {self.kappa!r}")

    @property
    def recovery_level(self) -> float:
        return self.kappa * self.tau_d


class DriftEvent(str, enum.Enum):
    DETECTED = "drift_detected"
    RECOVERED = "recovery_complete"


@dataclass
class MonitorState:
    window: SlidingWindow
    recovering: bool = False
    t_0: Optional[int] = None
    t_r: Optional[int] = None
    last_score: Optional[float] = None

    @classmethod
    def new(cls, H: int) -> "MonitorState":
        return cls(window=SlidingWindow(H))


def push_and_score(state: MonitorState, e_t: float) -> Optional[float]:
    """Append an energy and return the window mean once the window is full."""
    if not e_t >= 0:
        raise ContractViolation(f"innovation energy must be >= 0, got {e_t!r}")
    state.window.push(e_t)
    if not state.window.full:
        return None
    state.last_score = state.window.mean()
    return state.last_score


def evaluate_drift(
    D_t: float,
    thresholds: Thresholds,
    state: MonitorState,
    t: int,
    can_recover: bool = True,
) -> Optional[DriftEvent]:
    """Apply the detect/complete hysteresis to one drift score.

    At most one event per call. ``can_recover=False`` models a loop with no
    recovery policy: detection is still logged but the episode can never be
    marked recovered.
    """
    if not D_t >= 0:
        raise ContractViolation(f"drift score must be >= 0, got {D_t!r}")
    if not state.recovering and D_t > thresholds.tau_d:
        state.recovering = True
        state.t_0 = t
        state.t_r = None
        return DriftEvent.DETECTED
    if state.recovering and can_recover and D_t <= thresholds.recovery_level:
        state.recovering = False
        state.t_r = t
        return DriftEvent.RECOVERED
    return None


def calibrate_thresholds(
    nominal_episode_scores: Iterable[Sequence[Optional[float]]],
    p_tau: float = 0.90,
    p_tau_d: float = 0.95,
    kappa: float = 0.85,
) -> Thresholds:
    """Percentile thresholds over per-episode maximum drift scores.

    ``None`` entries (window still filling) are ignored. Episodes with no
    score at all do not contribute.
    """
    if not 0 < p_tau <= p_tau_d < 1:
        raise ContractViolation(f"need 0 < p_tau <= p_tau_d < 1, got {p_tau}, {p_tau_d}")
    maxima = []
    for scores in nominal_episode_scores:
        vals = [float(s) for s in scores if s is not None]
        if vals:
            maxima.append(max(vals))
    if not maxima:
        raise CalibrationError("no nominal drift scores to calibrate thresholds from")
    return Thresholds(
        tau=nearest_rank(maxima, p_tau),
        tau_d=nearest_rank(maxima, p_tau_d),
        kappa=kappa,
    )


def detection_latency(t_0: int, t_star: int) -> int:
    """Steps from perturbation onset to detection; negative means pre-onset."""
    return int(t_0) - int(t_star)
