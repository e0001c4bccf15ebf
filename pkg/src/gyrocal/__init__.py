"""Online camera self-calibration from a gyroscope stream and tracked features."""

from .calibrator import (
    CalibrationReport,
    CalibratorConfig,
    FeatureSlot,
    FrameDiagnostics,
    InitialStds,
    StreamTimingError,
    init_state,
    reinit_feature,
    run,
    step_frame,
    step_gyro,
)
from .camera import BehindCameraError, Intrinsics, Pose
from .dynamics import ProcessNoiseConfig, StateLayout, estimate_gyro_bias
from .ekf import GaussianBelief, MeasurementModel, UpdateRejectedError
from .simulator import MonteCarloResult, SimConfig, run_monte_carlo, simulate
from .streams import Frame, FeatureObservation, GyroSample

__all__ = [
    "BehindCameraError",
    "CalibrationReport",
    "CalibratorConfig",
    "FeatureObservation",
    "FeatureSlot",
    "Frame",
    "FrameDiagnostics",
    "GaussianBelief",
    "GyroSample",
    "InitialStds",
    "Intrinsics",
    "MeasurementModel",
    "MonteCarloResult",
    "Pose",
    "ProcessNoiseConfig",
    "SimConfig",
    "StateLayout",
    "StreamTimingError",
    "UpdateRejectedError",
    "estimate_gyro_bias",
    "init_state",
    "reinit_feature",
    "run",
    "run_monte_carlo",
    "simulate",
    "step_frame",
    "step_gyro",
]

__version__ = "0.1.0"
