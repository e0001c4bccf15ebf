"""Synthetic data generation: smooth camera orbits around a regular point grid.

The camera follows a closed, C-infinity path on a wobbling spherical shell
around the structure and continuously looks at its centroid with a slow
random roll. Gyro rates are extracted from the orientation trace with the
same discrete convention the filter propagates with, so noiseless rates
reproduce the orientation exactly; feature tracks are rendered through the
same projection code the filter predicts with, so model mismatch is exactly
the injected noise.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import calibrator as calib
from . import camera, rotation
from .calibrator import CalibratorConfig, INTRINSIC_NAMES
from .camera import BehindCameraError, Intrinsics, Pose
from .streams import Frame, FeatureObservation, GyroSample


@dataclass
class SimConfig:
    n_trials: int = 100
    n_features: int = 27
    grid_dim: int = 3
    grid_spacing: float = 1.0
    intrinsics: Intrinsics = field(default_factory=lambda: Intrinsics(575.0, 575.0, 240.0, 320.0, 0.0, 0.0))
    image_width: float = 480.0
    image_height: float = 640.0
    path_radius: float = 4.5
    radius_amplitude: float = 0.8
    azimuth_amplitude: float = 0.8
    elevation_amplitude: float = 0.35
    roll_amplitude: float = 0.4
    target_amplitude: float = 0.9
    translation_hz: float = 0.06
    aim_hz: float = 0.4
    max_angular_speed: float = 2.5
    gyro_rate_hz: float = 100.0
    frame_rate_hz: float = 10.0
    duration_s: float = 65.0
    gyro_noise_std: float = 0.01
    gyro_bias: tuple[float, float, float] = (0.0, 0.0, 0.0)
    pixel_noise_std: float = 2.5
    seed: int = 0

    def __post_init__(self):
        if self.gyro_rate_hz <= 0.0 or self.frame_rate_hz <= 0.0:
            raise ValueError("sampling rates must be positive")
        ratio = self.gyro_rate_hz / self.frame_rate_hz
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("gyro rate must be an integer multiple of the frame rate")
        if self.n_features > self.grid_dim**3:
            raise ValueError("n_features exceeds the grid capacity")


@dataclass
class GroundTruth:
    intrinsics: Intrinsics
    times: np.ndarray
    positions: np.ndarray
    quaternions: np.ndarray
    points: np.ndarray


@dataclass
class SimData:
    gyro: list
    frames: list
    truth: GroundTruth
    seed: int


def scaled_config(cfg: SimConfig, s: float) -> SimConfig:
    """The same scenario with every length-dimensioned quantity scaled by s."""
    return replace(
        cfg,
        grid_spacing=cfg.grid_spacing * s,
        path_radius=cfg.path_radius * s,
        radius_amplitude=cfg.radius_amplitude * s,
    )


def generate_scene(cfg: SimConfig) -> np.ndarray:
    """Points of a regular grid centered at the origin, deterministic in cfg."""
    half = (cfg.grid_dim - 1) / 2.0
    coords = (np.arange(cfg.grid_dim) - half) * cfg.grid_spacing
    grid = np.array([[x, y, z] for x in coords for y in coords for z in coords])
    return grid[: cfg.n_features]


class _Sinusoids:
    """Sum of 2 to 4 random-phase sinusoids whose periods divide the duration."""

    def __init__(self, rng, total_amplitude: float, duration: float, max_cycles: int = 6):
        n = int(rng.integers(2, 5))
        cycles = rng.integers(1, max_cycles + 1, size=n)
        weights = rng.uniform(0.5, 1.0, size=n)
        self.amplitudes = weights * (total_amplitude / weights.sum())
        self.freqs = cycles / duration
        self.phases = rng.uniform(0.0, 2.0 * np.pi, size=n)

    def __call__(self, t: float) -> float:
        return float(np.sum(self.amplitudes * np.sin(2.0 * np.pi * self.freqs * t + self.phases)))


class Trajectory:
    """Continuous pose function of time: shell orbit with look-at orientation.

    Poses are expressed in the frame of the camera at t = 0 (the trace starts
    at the identity pose), matching the anchor the filter uses. The propagation
    convention expresses angular rates in the world frame, so the rate stream
    is only meaningful together with a trace anchored this way.
    """

    def __init__(self, cfg: SimConfig, seed: int):
        rng = np.random.default_rng([int(seed), 0])
        self.azimuth0 = float(rng.uniform(0.0, 2.0 * np.pi))
        self.elevation0 = float(rng.uniform(-0.1, 0.25))
        self.radius0 = cfg.path_radius
        d = cfg.duration_s
        # Translation stays gentle (small accelerations suit the constant-velocity
        # motion prior) while the aim point and roll move briskly, giving strong
        # rotational excitation without violent camera travel.
        slow = max(1, int(round(d * cfg.translation_hz)))
        fast = max(2, int(round(d * cfg.aim_hz)))
        self.azimuth = _Sinusoids(rng, cfg.azimuth_amplitude, d, slow)
        self.elevation = _Sinusoids(rng, cfg.elevation_amplitude, d, slow)
        self.radius = _Sinusoids(rng, cfg.radius_amplitude, d, slow)
        self.roll = _Sinusoids(rng, cfg.roll_amplitude, d, fast)
        # The aim point wanders inside the structure so features sweep the frame.
        self.target = [_Sinusoids(rng, cfg.target_amplitude, d, fast) for _ in range(3)]
        # Anchor: world frame = camera frame at t = 0.
        self._anchor_rot = np.eye(3)
        self._anchor_pos = np.zeros(3)
        p0, rot0 = self._build_pose(0.0)
        self._anchor_rot = rot0
        self._anchor_pos = p0

    def _build_position(self, t: float) -> np.ndarray:
        az = self.azimuth0 + self.azimuth(t)
        el = self.elevation0 + self.elevation(t)
        r = self.radius0 + self.radius(t)
        return r * np.array(
            [math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)]
        )

    def _build_pose(self, t: float):
        p = self._build_position(t)
        target = np.array([s(t) for s in self.target])
        forward = target - p
        forward = forward / np.linalg.norm(forward)
        up = np.array([0.0, 0.0, 1.0])
        # Image y axis points down; degenerate only if the camera looks straight up/down.
        down = -(up - (up @ forward) * forward)
        norm = np.linalg.norm(down)
        if norm < 1e-9:
            raise ValueError("look direction parallel to the build-frame vertical")
        down = down / norm
        right = np.cross(down, forward)
        psi = self.roll(t)
        x_axis = math.cos(psi) * right + math.sin(psi) * down
        y_axis = -math.sin(psi) * right + math.cos(psi) * down
        return p, np.column_stack([x_axis, y_axis, forward])

    def to_world(self, pts) -> np.ndarray:
        """Map build-frame points into the anchored world frame."""
        pts = np.asarray(pts, dtype=float)
        return (pts - self._anchor_pos) @ self._anchor_rot

    def position(self, t: float) -> np.ndarray:
        return self._anchor_rot.T @ (self._build_position(t) - self._anchor_pos)

    def pose(self, t: float) -> Pose:
        p, rot = self._build_pose(t)
        return Pose(
            self._anchor_rot.T @ (p - self._anchor_pos),
            rotation.rotation_to_quat(self._anchor_rot.T @ rot),
        )


def generate_trajectory(cfg: SimConfig, seed: int) -> Trajectory:
    return Trajectory(cfg, seed)


def _rate_between(q_from: np.ndarray, q_to: np.ndarray, dt: float) -> np.ndarray:
    """Constant rate whose discrete propagation maps q_from to q_to over dt."""
    dq = rotation.quat_multiply(q_to, rotation.quat_conjugate(q_from))
    if dq[0] < 0.0:
        dq = -dq
    vec = dq[1:]
    nv = float(np.linalg.norm(vec))
    if nv < 1e-15:
        return np.zeros(3)
    angle = 2.0 * math.atan2(nv, float(dq[0]))
    return (angle / (dt * nv)) * vec


def sample_gyro(traj: Trajectory, cfg: SimConfig, rng=None) -> list:
    """Rates at the gyro rate, with additive Gaussian noise and constant bias."""
    if rng is None:
        rng = np.random.default_rng([cfg.seed, 1])
    dt = 1.0 / cfg.gyro_rate_hz
    n = round(cfg.duration_s * cfg.gyro_rate_hz)
    bias = np.asarray(cfg.gyro_bias, dtype=float)
    samples = []
    for k in range(n):
        t = k * dt
        omega = _rate_between(traj.pose(t).q, traj.pose(t + dt).q, dt)
        noisy = omega + bias + rng.normal(0.0, cfg.gyro_noise_std, size=3)
        samples.append(GyroSample(t, noisy))
    return samples


def render_observations(traj: Trajectory, points: np.ndarray, cfg: SimConfig, rng=None) -> list:
    """Noisy pixel tracks at the frame rate; only in-bounds projections are emitted."""
    if rng is None:
        rng = np.random.default_rng([cfg.seed, 2])
    dt = 1.0 / cfg.frame_rate_hz
    n = round(cfg.duration_s * cfg.frame_rate_hz)
    frames = []
    for k in range(n):
        t = k * dt
        pose = traj.pose(t)
        observations = []
        for fid, point in enumerate(points):
            try:
                uv = camera.measure_feature(point, cfg.intrinsics, pose)
            except BehindCameraError:
                continue
            uv = uv + rng.normal(0.0, cfg.pixel_noise_std, size=2)
            if 0.0 <= uv[0] <= cfg.image_width and 0.0 <= uv[1] <= cfg.image_height:
                observations.append(FeatureObservation(fid, float(uv[0]), float(uv[1])))
        frames.append(Frame(t, observations))
    return frames


def simulate(cfg: SimConfig, seed: int | None = None) -> SimData:
    """One full synthetic trial: gyro log, feature tracks, and ground truth."""
    if seed is None:
        seed = cfg.seed
    cfg_run = replace(cfg, seed=seed)
    traj = generate_trajectory(cfg_run, seed)
    points = traj.to_world(generate_scene(cfg_run))
    gyro = sample_gyro(traj, cfg_run)
    frames = render_observations(traj, points, cfg_run)

    times = np.array([s.t for s in gyro])
    positions = np.array([traj.position(t) for t in times])
    quats = []
    prev = None
    for t in times:
        q = traj.pose(t).q
        if prev is not None and float(q @ prev) < 0.0:
            q = -q
        quats.append(q)
        prev = q
    truth = GroundTruth(
        intrinsics=cfg_run.intrinsics,
        times=times,
        positions=positions,
        quaternions=np.array(quats),
        points=points,
    )
    return SimData(gyro=gyro, frames=frames, truth=truth, seed=seed)


@dataclass
class MonteCarloResult:
    n_trials: int
    rmse: dict
    initial_rmse: dict
    trials: list
    reports: list
    sim_config: dict
    calibrator_config: dict


def run_monte_carlo(
    sim_cfg: SimConfig,
    calib_cfg: CalibratorConfig | None = None,
    n_trials: int | None = None,
    base_seed: int | None = None,
    keep_reports: bool = True,
    keep_data: bool = False,
) -> MonteCarloResult:
    """Simulate and calibrate repeated trials; report per-parameter RMSE."""
    if calib_cfg is None:
        calib_cfg = CalibratorConfig()
    if n_trials is None:
        n_trials = sim_cfg.n_trials
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    if base_seed is None:
        base_seed = sim_cfg.seed

    truth_vec = sim_cfg.intrinsics.as_array()
    cx0, cy0 = calib_cfg.init_center
    init_vec = np.array([calib_cfg.init_focal, calib_cfg.init_focal, cx0, cy0, 0.0, 0.0])

    trials = []
    reports = []
    errors = []
    for i in range(n_trials):
        seed = base_seed + i
        data = simulate(sim_cfg, seed)
        report = calib.run(data.gyro, data.frames, calib_cfg)
        estimate = report.final_intrinsics.as_array()
        err = estimate - truth_vec
        errors.append(err)
        record = {
            "seed": seed,
            "estimate": dict(zip(INTRINSIC_NAMES, estimate)),
            "error": dict(zip(INTRINSIC_NAMES, err)),
            "total_gated": report.total_gated,
            "total_reinits": report.total_reinits,
        }
        if keep_data:
            record["data"] = data
        trials.append(record)
        if keep_reports:
            reports.append(report)

    errors = np.array(errors)
    rmse = dict(zip(INTRINSIC_NAMES, np.sqrt(np.mean(errors**2, axis=0))))
    initial_rmse = dict(zip(INTRINSIC_NAMES, np.abs(init_vec - truth_vec)))
    return MonteCarloResult(
        n_trials=n_trials,
        rmse=rmse,
        initial_rmse=initial_rmse,
        trials=trials,
        reports=reports,
        sim_config=sim_config_echo(sim_cfg),
        calibrator_config=calib.config_echo(calib_cfg),
    )


def sim_config_echo(cfg: SimConfig) -> dict:
    echo = asdict(cfg)
    echo["gyro_bias"] = list(cfg.gyro_bias)
    return echo
