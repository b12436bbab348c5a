"""Runtime stability monitoring and recovery for iterative agent loops,
with a synthetic episode simulator and experiment harness."""

__version__ = "0.1.0"

from .core import (
    ScaleCalibration,
    StabilityBounds,
    StabilityVerdict,
    calibrate_scale,
    check_runtime_stability,
    cosine_distance_innovation,
    innovation_energy,
    semantic_drift,
    unit_vector,
)
from .errors import AgentStabError, CalibrationError, ConfigError, ContractViolation, VerdictError
from .monitor import DriftEvent, MonitorState, SlidingWindow, Thresholds, calibrate_thresholds, evaluate_drift
from .recovery import ControllerState, Mechanism, RecoveryConfig, RecoveryEvent, mttr_a
from .simulator import SimConfig, Variant, run_episode
from .harness import Condition, ExperimentPlan, calibrate_all, run_ablation, run_condition

__all__ = [
    "AgentStabError",
    "Condition",
    "ExperimentPlan",
    "SimConfig",
    "Variant",
    "calibrate_all",
    "run_ablation",
    "run_condition",
    "run_episode",
    "CalibrationError",
    "ConfigError",
    "ContractViolation",
    "ControllerState",
    "DriftEvent",
    "Mechanism",
    "MonitorState",
    "RecoveryConfig",
    "RecoveryEvent",
    "ScaleCalibration",
    "SlidingWindow",
    "StabilityBounds",
    "StabilityVerdict",
    "Thresholds",
    "VerdictError",
    "calibrate_scale",
    "calibrate_thresholds",
    "check_runtime_stability",
    "cosine_distance_innovation",
    "evaluate_drift",
    "innovation_energy",
    "mttr_a",
    "semantic_drift",
    "unit_vector",
]
