"""State layout and the discrete-time transition model.

State vector order: intrinsics (6), position (3), velocity (3), quaternion (4),
then 3 entries per tracked feature. Intrinsics and features propagate as
identities, translation follows a Wiener-velocity model, and the quaternion
block is driven by the bias-compensated gyro rate held constant over the step.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rotation


@dataclass(frozen=True)
class StateLayout:
    """Index ranges of the state vector for a fixed feature capacity."""

    n_features: int

    def __post_init__(self):
        if self.n_features < 0:
            raise ValueError("n_features must be non-negative")

    @property
    def n(self) -> int:
        return 16 + 3 * self.n_features

    @property
    def intrinsics(self) -> slice:
        return slice(0, 6)

    @property
    def position(self) -> slice:
        return slice(6, 9)

    @property
    def velocity(self) -> slice:
        return slice(9, 12)

    @property
    def quaternion(self) -> slice:
        return slice(12, 16)

    @property
    def features(self) -> slice:
        return slice(16, self.n)

    def feature_slice(self, i: int) -> slice:
        if not 0 <= i < self.n_features:
            raise IndexError(f"feature index {i} out of range [0, {self.n_features})")
        return slice(16 + 3 * i, 19 + 3 * i)

    @classmethod
    def for_state(cls, mean: np.ndarray) -> "StateLayout":
        size = len(mean)
        if size < 16 or (size - 16) % 3 != 0:
            raise ValueError(f"state length {size} does not match 16 + 3*d")
        return cls((size - 16) // 3)


@dataclass
class ProcessNoiseConfig:
    """Process-noise tuning for the translation and rotation blocks.

    accel_spectral_density drives the Wiener-velocity translation model
    (scene units squared per second cubed). gyro_rate_std is the assumed
    per-axis rate noise used when pushing gyro uncertainty into the
    quaternion block. gyro_bias is subtracted from every rate sample;
    it is estimated off-line (see estimate_gyro_bias).
    """

    accel_spectral_density: float = 1.0
    gyro_rate_std: float = 0.2
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        if self.accel_spectral_density < 0.0 or self.gyro_rate_std < 0.0:
            raise ValueError("noise densities must be non-negative")


def build_transition(layout: StateLayout, dt: float, omega, cfg: ProcessNoiseConfig) -> np.ndarray:
    """n x n transition matrix: identity blocks, constant-velocity coupling,
    and the closed-form quaternion rotation for the bias-compensated rate."""
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    omega = np.asarray(omega, dtype=float)
    if not np.all(np.isfinite(omega)):
        raise ValueError("angular rate has non-finite components")
    a = np.eye(layout.n)
    a[layout.position, layout.velocity] = dt * np.eye(3)
    omega_eff = omega - np.asarray(cfg.gyro_bias, dtype=float)
    a[layout.quaternion, layout.quaternion] = rotation.propagation_matrix(omega_eff, dt)
    return a


def build_process_noise(layout: StateLayout, dt: float, q_mean, cfg: ProcessNoiseConfig) -> np.ndarray:
    """n x n process noise: Wiener-velocity translation block plus first-order
    push-forward of gyro rate noise into quaternion space; zero elsewhere."""
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    q = np.zeros((layout.n, layout.n))
    qc = cfg.accel_spectral_density
    eye3 = np.eye(3)
    q[layout.position, layout.position] = qc * dt**3 / 3.0 * eye3
    q[layout.position, layout.velocity] = qc * dt**2 / 2.0 * eye3
    q[layout.velocity, layout.position] = qc * dt**2 / 2.0 * eye3
    q[layout.velocity, layout.velocity] = qc * dt * eye3
    g = (dt / 2.0) * rotation.quat_rate_matrix(q_mean)
    q[layout.quaternion, layout.quaternion] = (cfg.gyro_rate_std**2 * dt) * (g @ g.T)
    return q


def estimate_gyro_bias(samples, stationary_duration: float) -> np.ndarray:
    """Mean rate over the stationary prefix of a gyro log.

    samples: sequence with .t and .omega attributes, sorted by time.
    """
    samples = list(samples)
    if not samples:
        raise ValueError("empty gyro stream")
    t0 = samples[0].t
    rates = [np.asarray(s.omega, dtype=float) for s in samples if s.t - t0 <= stationary_duration]
    if not rates:
        raise ValueError("no samples inside the stationary prefix")
    return np.mean(rates, axis=0)
