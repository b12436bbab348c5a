"""Measured quantities of the stability layer.

Every function here is pure. Vectors are plain ``numpy`` float arrays; the
``unit_vector`` constructor is the one place that enforces the unit-norm
invariant, and the cosine-based signals check it again on entry.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Literal, Optional, Sequence

import numpy as np

from .errors import CalibrationError, ContractViolation, VerdictError

UNIT_TOL = 1e-9
DEFAULT_EPSILON = 1e-6

ScaleMode = Literal["variance", "second_moment"]


def unit_vector(components) -> np.ndarray:
    """Return ``components`` rescaled to unit Euclidean norm.

    Raises ContractViolation for zero-norm input, non-finite entries or
    fewer than two dimensions.
    """
    v = np.asarray(components, dtype=float).reshape(-1)
    if v.size < 2:
        raise ContractViolation(f"unit vectors need dim >= 2, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ContractViolation("unit vector components must be finite")
    n = float(np.linalg.norm(v))
    if n == 0.0:
        raise ContractViolation("cannot normalize a zero vector")
    return v / n


def is_unit(v: np.ndarray, tol: float = UNIT_TOL) -> bool:
    return abs(float(np.linalg.norm(v)) - 1.0) <= tol


def _check_pair(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ContractViolation(f"dimension mismatch: {a.shape} vs {b.shape}")
    for v in (a, b):
        n = float(np.linalg.norm(v))
        if n == 0.0:
            raise ContractViolation("zero-norm vector")
        if abs(n - 1.0) > UNIT_TOL:
            raise ContractViolation(f"vector is not unit-norm (|v| = {n!r})")


def _cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    _check_pair(a, b)
    if np.array_equal(a, b):
        return 0.0
    c = float(np.dot(a, b))
    return min(2.0, max(0.0, 1.0 - c))


def cosine_distance_innovation(pred: np.ndarray, realized: np.ndarray) -> float:
    """Scalar innovation ``1 - cos(pred, realized)`` in ``[0, 2]``.

    The vector residual ``realized - pred`` is the general form; the monitored
    signal is this cosine proxy.
    """
    return _cosine_distance(pred, realized)


def semantic_drift(x_t: np.ndarray, x_0: np.ndarray) -> float:
    """Deviation of the current latent state from the initial task state."""
    return _cosine_distance(x_t, x_0)


@dataclass(frozen=True)
class ScaleCalibration:
    """Nominal innovation statistics used to normalize energies.

    ``S`` is the population variance of the nominal innovations plus
    ``epsilon`` (or the raw second moment plus ``epsilon`` when
    ``mode == "second_moment"``).
    """

    mu_nu: float
    S: float
    epsilon: float = DEFAULT_EPSILON
    mode: ScaleMode = "variance"
    n_samples: int = 0
    dim: Optional[int] = None

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ContractViolation("epsilon must be > 0")
        if not self.S > 0:
            raise ContractViolation("S must be > 0")
        if self.S < self.epsilon:
            raise ContractViolation("S must be >= epsilon")

    @property
    def degenerate(self) -> bool:
        """True when the nominal sample had no spread at all."""
        return self.S == self.epsilon


def calibrate_scale(
    nominal_nus: Iterable[float],
    epsilon: float = DEFAULT_EPSILON,
    mode: ScaleMode = "variance",
    dim: Optional[int] = None,
) -> ScaleCalibration:
    """Fit the innovation scale from nominal innovations.

    ``mode="variance"`` gives ``S = mean((nu - mu)^2) + epsilon``;
    ``mode="second_moment"`` gives ``S = mean(nu^2) + epsilon``.
    """
    if not epsilon > 0:
        raise ContractViolation(f"epsilon must be > 0, got {epsilon!r}")
    nus = np.asarray(list(nominal_nus), dtype=float)
    if nus.size < 2:
        raise CalibrationError(f"need at least 2 nominal innovations, got {nus.size}")
    if not np.all(np.isfinite(nus)):
        raise CalibrationError("nominal innovations must be finite")
    mu = float(np.mean(nus))
    if mode == "variance":
        spread = float(np.mean((nus - mu) ** 2))
    elif mode == "second_moment":
        spread = float(np.mean(nus**2))
    else:
        raise ContractViolation(f"unknown scale mode {mode!r}")
    return ScaleCalibration(mu_nu=mu, S=spread + epsilon, epsilon=epsilon, mode=mode, n_samples=int(nus.size), dim=dim)


def innovation_energy(nu: float, cal: ScaleCalibration | float) -> float:
    """Normalized energy ``nu**2 / S``."""
    S = cal.S if isinstance(cal, ScaleCalibration) else float(cal)
    if not S > 0:
        raise ContractViolation(f"scale S must be > 0, got {S!r}")
    return nu * nu / S


@dataclass(frozen=True)
class InnovationSample:
    t: int
    nu: float
    energy: float


def innovation_sample(t: int, pred: np.ndarray, realized: np.ndarray, cal: ScaleCalibration) -> InnovationSample:
    nu = cosine_distance_innovation(pred, realized)
    return InnovationSample(t=t, nu=nu, energy=innovation_energy(nu, cal))


@dataclass(frozen=True)
class StabilityBounds:
    B: float
    B_d: float
    delta: float

    def __post_init__(self):
        if not self.B > 0 or not self.B_d > 0:
            raise ContractViolation("bounds B and B_d must be > 0")
        if not 0 < self.delta < 1:
            raise ContractViolation("delta must lie in (0, 1)")


@dataclass(frozen=True)
class StabilityVerdict:
    stable: bool
    energy_exceedance: float
    drift_exceedance: float


def check_runtime_stability(
    energies: Sequence[float],
    drift_scores: Sequence[Optional[float]],
    bounds: StabilityBounds,
) -> StabilityVerdict:
    """Empirical finite-horizon stability check.

    Stable iff the fraction of energies above ``B`` and the fraction of drift
    scores above ``B_d`` are both at most ``delta``. ``None`` drift scores
    (window not yet full) are skipped.
    """
    e = [float(v) for v in energies]
    d = [float(v) for v in drift_scores if v is not None]
    if not e or not d:
        raise VerdictError("stability verdict needs nonempty energy and drift-score sequences")
    fe = sum(v > bounds.B for v in e) / len(e)
    fd = sum(v > bounds.B_d for v in d) / len(d)
    return StabilityVerdict(
        stable=fe <= bounds.delta and fd <= bounds.delta,
        energy_exceedance=fe,
        drift_exceedance=fd,
    )


def nearest_rank(values: Sequence[float], p: float) -> float:
    """Nearest-rank percentile: element ``ceil(p * n)`` (1-based) of the sorted values."""
    if not values:
        raise CalibrationError("percentile of an empty collection")
    if not 0 < p <= 1:
        raise ContractViolation(f"percentile rank must lie in (0, 1], got {p!r}")
    ordered = sorted(values)
    k = max(1, math.ceil(p * len(ordered) - 1e-12))
    return float(ordered[k - 1])
