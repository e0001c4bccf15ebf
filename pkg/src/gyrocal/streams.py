"""Record types for the two input streams: gyro samples and tracked features."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class GyroSample:
    """Timestamped 3-axis angular rate (rad/s)."""

    t: float
    omega: np.ndarray

    def __post_init__(self):
        self.omega = np.asarray(self.omega, dtype=float)
        if self.omega.shape != (3,):
            raise ValueError("omega must have 3 components")


@dataclass
class FeatureObservation:
    """One tracked feature's pixel coordinates in one frame."""

    feature_id: int
    u: float
    v: float

    def pixel(self) -> np.ndarray:
        return np.array([self.u, self.v])


@dataclass
class Frame:
    """All feature observations sharing one timestamp."""

    t: float
    observations: list[FeatureObservation] = field(default_factory=list)
