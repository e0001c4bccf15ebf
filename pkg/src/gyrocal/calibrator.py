"""Online self-calibration loop.

The calibrator merges a fast gyro stream with a slower stream of tracked
feature frames. Every gyro interval drives one linear prediction of the full
state (intrinsics, position, velocity, orientation quaternion, feature
positions). Every frame triggers a joint visual update over the features that
pass a per-feature chi-square innovation gate; outliers and features lost by
the tracker are re-initialized from their next observed pixel with an
uninformative prior.

Feature capacity is fixed when the first frame arrives: one slot per observed
feature. Slots whose track dies are recycled, so the state dimension never
changes during a run.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.stats import chi2

from . import camera, dynamics, ekf, rotation
from .camera import BehindCameraError, Intrinsics, Pose
from .dynamics import ProcessNoiseConfig, StateLayout
from .ekf import GaussianBelief
from .streams import Frame, GyroSample

INTRINSIC_NAMES = ("fx", "fy", "cx", "cy", "k1", "k2")

STATUS_ACTIVE = "active"
STATUS_AWAITING = "awaiting-reinit"


class StreamTimingError(ValueError):
    """Timestamps regressed or a gyro gap exceeded the configured maximum."""


@dataclass
class InitialStds:
    """Initial marginal standard deviations of the filter state.

    Position is anchored at zero uncertainty to pin the unobservable global
    frame; velocity and the quaternion get mild priors; feature blocks use
    CalibratorConfig.feature_init_std.
    """

    fx: float = 100.0
    fy: float = 100.0
    cx: float = 20.0
    cy: float = 20.0
    k1: float = 0.1
    k2: float = 0.05
    position: float = 0.0
    velocity: float = 0.5
    quaternion: float = 0.1


@dataclass
class CalibratorConfig:
    pixel_noise_std: float = 2.5
    gate_chi2_quantile: float = 0.999
    init_focal: float = 700.0
    init_center: tuple[float, float] = (240.0, 320.0)
    init_stds: InitialStds = field(default_factory=InitialStds)
    feature_init_depth: float = 5.0
    feature_init_std: float = 10.0
    process: ProcessNoiseConfig = field(default_factory=ProcessNoiseConfig)
    distortion_mode: str = "centered"
    max_gyro_gap: float = 0.2
    depth_epsilon: float = 1e-6

    def __post_init__(self):
        if self.pixel_noise_std <= 0.0:
            raise ValueError("pixel_noise_std must be positive")
        if not 0.0 < self.gate_chi2_quantile < 1.0:
            raise ValueError("gate_chi2_quantile must lie in (0, 1)")
        if self.feature_init_depth <= 0.0 or self.feature_init_std <= 0.0:
            raise ValueError("feature initialization values must be positive")
        if self.distortion_mode not in camera.DISTORTION_MODES:
            raise ValueError(f"unknown distortion mode {self.distortion_mode!r}")


@dataclass
class FeatureSlot:
    """Binding of a tracked feature id to one feature block of the state."""

    id: int | None
    state_index: int
    status: str = STATUS_ACTIVE
    age: int = 0


@dataclass
class FrameDiagnostics:
    t: float
    n_observed: int = 0
    n_inliers: int = 0
    n_gated: int = 0
    n_reinit: int = 0
    innovation_rms: float = 0.0
    skipped: bool = False


@dataclass
class CalibrationReport:
    """Final estimates plus full per-frame convergence traces."""

    final_intrinsics: Intrinsics
    final_std: dict
    final_position: np.ndarray
    final_quaternion: np.ndarray
    times: np.ndarray
    intrinsic_trace: np.ndarray
    intrinsic_std_trace: np.ndarray
    position_trace: np.ndarray
    quaternion_trace: np.ndarray
    innovation_rms_trace: np.ndarray
    inlier_trace: np.ndarray
    gated_trace: np.ndarray
    reinit_trace: np.ndarray
    feature_ids: list
    feature_positions: np.ndarray
    n_frames: int
    n_predict_steps: int
    total_gated: int
    total_reinits: int
    skipped_frames: int
    config: dict


def config_echo(cfg: CalibratorConfig) -> dict:
    """Every configuration value, defaults included, as plain JSON-ready data."""
    echo = asdict(cfg)
    echo["init_center"] = list(cfg.init_center)
    echo["process"]["gyro_bias"] = list(cfg.process.gyro_bias)
    return echo


def init_state(cfg: CalibratorConfig, first_frame_observations, layout: StateLayout) -> GaussianBelief:
    """Initial Gaussian belief.

    Intrinsics start at the configured focal guess and image center with zero
    distortion; pose anchors the global frame (p = 0, q = identity); each
    observed feature is back-projected to the configured depth.
    """
    observations = list(first_frame_observations)
    if not observations:
        raise ValueError("cannot initialize from an empty observation set")
    if len(observations) != layout.n_features:
        raise ValueError(
            f"{len(observations)} observations do not fill a layout with {layout.n_features} features"
        )
    cx0, cy0 = cfg.init_center
    intr = Intrinsics(cfg.init_focal, cfg.init_focal, cx0, cy0, 0.0, 0.0)
    pose = Pose(np.zeros(3), rotation.IDENTITY_QUAT.copy())

    mean = np.zeros(layout.n)
    mean[layout.intrinsics] = intr.as_array()
    mean[layout.quaternion] = rotation.IDENTITY_QUAT
    for i, obs in enumerate(observations):
        mean[layout.feature_slice(i)] = camera.back_project(obs.pixel(), intr, pose, cfg.feature_init_depth)

    stds = np.zeros(layout.n)
    s = cfg.init_stds
    stds[layout.intrinsics] = [s.fx, s.fy, s.cx, s.cy, s.k1, s.k2]
    stds[layout.position] = s.position
    stds[layout.velocity] = s.velocity
    stds[layout.quaternion] = s.quaternion
    stds[layout.features] = cfg.feature_init_std
    return GaussianBelief(mean, np.diag(stds**2))


def step_gyro(belief: GaussianBelief, sample: GyroSample, dt: float, cfg: CalibratorConfig) -> GaussianBelief:
    """One prediction over a gyro interval; the rate is held constant across dt."""
    if dt < 0.0:
        raise StreamTimingError(f"timestamp regression: dt={dt:.6g}")
    if dt > cfg.max_gyro_gap:
        raise StreamTimingError(f"gyro gap {dt:.6g}s exceeds maximum {cfg.max_gyro_gap:.6g}s")
    if dt == 0.0:
        return belief
    layout = StateLayout.for_state(belief.mean)
    transition = dynamics.build_transition(layout, dt, sample.omega, cfg.process)
    noise = dynamics.build_process_noise(layout, dt, belief.mean[layout.quaternion], cfg.process)
    return ekf.predict(belief, transition, noise)


def reinit_feature(belief: GaussianBelief, slot: FeatureSlot, pixel, cfg: CalibratorConfig) -> GaussianBelief:
    """Reset one feature block to an uninformative prior at the observed pixel.

    The mean is back-projected through the current camera estimate at the
    configured depth; the block covariance becomes isotropic and every
    cross-covariance with the rest of the state is dropped, so nothing from
    the dead track leaks into the fresh one.
    """
    layout = StateLayout.for_state(belief.mean)
    block = layout.feature_slice(slot.state_index)
    intr = Intrinsics.from_array(belief.mean[layout.intrinsics])
    pose = Pose(belief.mean[layout.position], belief.mean[layout.quaternion])
    point = camera.back_project(np.asarray(pixel, dtype=float), intr, pose, cfg.feature_init_depth)

    mean = belief.mean.copy()
    mean[block] = point
    cov = belief.cov.copy()
    cov[block, :] = 0.0
    cov[:, block] = 0.0
    cov[block, block] = cfg.feature_init_std**2 * np.eye(3)
    slot.status = STATUS_ACTIVE
    slot.age = 0
    return GaussianBelief(mean, cov)


def step_frame(
    belief: GaussianBelief,
    observations,
    slots: list[FeatureSlot],
    cfg: CalibratorConfig,
    t: float = 0.0,
):
    """One visual update.

    Active observed features are gated individually on the Mahalanobis
    distance of their innovation (chi-square, 2 dof); the surviving inliers
    feed one joint update followed by quaternion renormalization. Gated
    features, reacquired tracks, and brand-new ids claiming a free slot are
    re-initialized afterwards from this frame's pixels.
    """
    observations = list(observations)
    layout = StateLayout.for_state(belief.mean)
    seen = set()
    for obs in observations:
        if obs.feature_id in seen:
            raise ValueError(f"duplicate feature id {obs.feature_id} in one frame")
        seen.add(obs.feature_id)

    slot_by_id = {slot.id: slot for slot in slots if slot.id is not None}
    candidates = []  # (slot, obs, predicted, jacobian) for active measurable features
    to_reinit = []  # (slot, pixel) resolved after the update
    unmatched = []

    for obs in observations:
        slot = slot_by_id.get(obs.feature_id)
        if slot is None:
            unmatched.append(obs)
            continue
        if slot.status != STATUS_ACTIVE:
            to_reinit.append((slot, obs.pixel()))
            continue
        try:
            predicted, jac = camera.measurement_with_jacobian(
                belief.mean, layout, slot.state_index, cfg.distortion_mode, cfg.depth_epsilon
            )
        except BehindCameraError:
            to_reinit.append((slot, obs.pixel()))
            continue
        candidates.append((slot, obs, predicted, jac))

    gate = chi2.ppf(cfg.gate_chi2_quantile, df=2)
    pixel_cov = cfg.pixel_noise_std**2 * np.eye(2)
    inliers = []
    n_gated_outliers = 0
    for slot, obs, predicted, jac in candidates:
        innov = obs.pixel() - predicted
        s = jac @ belief.cov @ jac.T + pixel_cov
        dist = float(innov @ np.linalg.solve(s, innov))
        if dist > gate:
            to_reinit.append((slot, obs.pixel()))
            n_gated_outliers += 1
        else:
            inliers.append((slot, obs, innov))

    updated = belief
    innovation_rms = 0.0
    if inliers:
        indices = [slot.state_index for slot, _, _ in inliers]
        y = np.concatenate([obs.pixel() for _, obs, _ in inliers])
        mode = cfg.distortion_mode
        eps = cfg.depth_epsilon

        def predict_stack(mean, _indices=indices):
            return np.concatenate(
                [
                    camera.measurement_with_jacobian(mean, layout, i, mode, eps)[0]
                    for i in _indices
                ]
            )

        def jacobian_stack(mean, _indices=indices):
            return np.vstack(
                [
                    camera.measurement_with_jacobian(mean, layout, i, mode, eps)[1]
                    for i in _indices
                ]
            )

        model = ekf.MeasurementModel(
            predict=predict_stack,
            jacobian=jacobian_stack,
            noise_cov=cfg.pixel_noise_std**2 * np.eye(2 * len(inliers)),
        )
        updated, innovation, _ = ekf.update(belief, y, model)
        updated = ekf.renormalize_quaternion(updated, layout)
        innovation_rms = math.sqrt(float(np.mean(innovation**2)))
        for slot, _, _ in inliers:
            slot.age += 1
    skipped = bool(candidates) and not inliers

    # Tracks missing from this frame wait for their next observation.
    observed_ids = {obs.feature_id for obs in observations}
    for slot in slots:
        if slot.status == STATUS_ACTIVE and slot.id not in observed_ids:
            slot.status = STATUS_AWAITING

    n_reinit = 0
    for slot, pixel in to_reinit:
        updated = reinit_feature(updated, slot, pixel, cfg)
        n_reinit += 1
    free = [s for s in slots if s.status != STATUS_ACTIVE and s.id not in observed_ids]
    for obs in unmatched:
        if not free:
            break  # capacity is fixed; surplus new tracks are dropped
        slot = free.pop(0)
        slot.id = obs.feature_id
        updated = reinit_feature(updated, slot, obs.pixel(), cfg)
        n_reinit += 1

    diag = FrameDiagnostics(
        t=t,
        n_observed=len(observations),
        n_inliers=len(inliers),
        n_gated=n_gated_outliers,
        n_reinit=n_reinit,
        innovation_rms=innovation_rms,
        skipped=skipped,
    )
    return updated, diag


def _validate_streams(gyro: list[GyroSample], frames: list[Frame]) -> None:
    if not gyro:
        raise ValueError("empty gyro stream")
    if not frames:
        raise ValueError("empty frame stream")
    t_gyro = np.array([s.t for s in gyro])
    if np.any(np.diff(t_gyro) <= 0.0):
        raise ValueError("gyro stream is not strictly increasing in time")
    t_frames = np.array([f.t for f in frames])
    if np.any(np.diff(t_frames) <= 0.0):
        raise ValueError("frame stream is not strictly increasing in time")
    if t_frames[0] < t_gyro[0] or t_frames[-1] > t_gyro[-1]:
        raise ValueError("frame timestamps fall outside the gyro time range")


def run(gyro, frames, cfg: CalibratorConfig, frame_callback=None) -> CalibrationReport:
    """Process both streams in time order and assemble the calibration report.

    Each frame first consumes the residual gyro interval (the latest rate is
    held constant up to the frame timestamp), then applies the visual update.
    The first frame only initializes the state; its trace row records the
    initial belief.
    """
    gyro = list(gyro)
    frames = list(frames)
    _validate_streams(gyro, frames)
    layout = StateLayout(len(frames[0].observations))

    events = [(s.t, 0, s) for s in gyro] + [(f.t, 1, f) for f in frames]
    events.sort(key=lambda e: (e[0], e[1]))

    belief = None
    slots: list[FeatureSlot] = []
    omega_cur = None
    t_cur = None
    n_predict = 0

    times = []
    intr_rows = []
    std_rows = []
    pos_rows = []
    quat_rows = []
    innov_rows = []
    inlier_rows = []
    gated_rows = []
    reinit_rows = []
    total_gated = 0
    total_reinits = 0
    skipped_frames = 0

    def record(t, diag):
        stds = np.sqrt(np.clip(np.diag(belief.cov)[layout.intrinsics], 0.0, None))
        times.append(t)
        intr_rows.append(belief.mean[layout.intrinsics].copy())
        std_rows.append(stds)
        pos_rows.append(belief.mean[layout.position].copy())
        quat_rows.append(belief.mean[layout.quaternion].copy())
        innov_rows.append(diag.innovation_rms)
        inlier_rows.append(diag.n_inliers)
        gated_rows.append(diag.n_gated)
        reinit_rows.append(diag.n_reinit)

    for t, kind, payload in events:
        if belief is not None and t > t_cur:
            belief = step_gyro(belief, GyroSample(t_cur, omega_cur), t - t_cur, cfg)
            n_predict += 1
            t_cur = t
        if kind == 0:
            omega_cur = payload.omega
        else:
            if belief is None:
                belief = init_state(cfg, payload.observations, layout)
                slots = [
                    FeatureSlot(obs.feature_id, i) for i, obs in enumerate(payload.observations)
                ]
                t_cur = t
                diag = FrameDiagnostics(t=t, n_observed=len(payload.observations))
            else:
                belief, diag = step_frame(belief, payload.observations, slots, cfg, t)
                total_gated += diag.n_gated
                total_reinits += diag.n_reinit
                skipped_frames += int(diag.skipped)
            record(t, diag)
            if frame_callback is not None:
                frame_callback(t, belief, diag)

    final_intr = Intrinsics.from_array(belief.mean[layout.intrinsics])
    final_std = dict(
        zip(INTRINSIC_NAMES, np.sqrt(np.clip(np.diag(belief.cov)[layout.intrinsics], 0.0, None)))
    )
    feature_positions = belief.mean[layout.features].reshape(-1, 3).copy()
    return CalibrationReport(
        final_intrinsics=final_intr,
        final_std=final_std,
        final_position=belief.mean[layout.position].copy(),
        final_quaternion=belief.mean[layout.quaternion].copy(),
        times=np.array(times),
        intrinsic_trace=np.array(intr_rows),
        intrinsic_std_trace=np.array(std_rows),
        position_trace=np.array(pos_rows),
        quaternion_trace=np.array(quat_rows),
        innovation_rms_trace=np.array(innov_rows),
        inlier_trace=np.array(inlier_rows),
        gated_trace=np.array(gated_rows),
        reinit_trace=np.array(reinit_rows),
        feature_ids=[slot.id for slot in slots],
        feature_positions=feature_positions,
        n_frames=len(frames),
        n_predict_steps=n_predict,
        total_gated=total_gated,
        total_reinits=total_reinits,
        skipped_frames=skipped_frames,
        config=config_echo(cfg),
    )
