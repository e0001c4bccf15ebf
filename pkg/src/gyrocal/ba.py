"""Batch refinement baseline: joint nonlinear least squares over intrinsics,
per-frame poses, and 3D points, minimizing the squared reprojection error.

A damped Gauss-Newton loop (Levenberg-Marquardt style, multiplicative damping
adaptation) works on a packed parameter vector. The monocular gauge is fixed
by freezing the first pose entirely and, after every accepted step, rescaling
points and camera centers about the first camera so the distance between it
and the structure centroid stays at its initial value; the reprojection cost
is exactly invariant under that rescaling.

Pose rotations are parametrized by their four quaternion components; residual
evaluation normalizes the quaternion, the Jacobian carries the matching
projection term, and accepted steps renormalize the stored values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_factor, cho_solve, LinAlgError

from . import camera, rotation
from .camera import BehindCameraError, Intrinsics, Pose
from .calibrator import CalibrationReport

DAMPING_MIN = 1e-12
DAMPING_MAX = 1e16


@dataclass
class BAProblem:
    """Observations plus initial parameter values and gauge anchors."""

    intrinsics: Intrinsics
    poses: list
    points: dict
    observations: list  # (frame_index, feature_id, pixel) triples
    optimize_distortion: bool = True
    distortion_mode: str = "centered"

    def __post_init__(self):
        for frame_idx, fid, _ in self.observations:
            if not 0 <= frame_idx < len(self.poses):
                raise ValueError(f"observation references missing frame {frame_idx}")
            if fid not in self.points:
                raise ValueError(f"observation references missing feature {fid}")


@dataclass
class BASolution:
    intrinsics: Intrinsics
    poses: list
    points: dict
    cost: float
    initial_cost: float
    converged: bool
    n_iterations: int
    message: str
    cost_history: list = field(default_factory=list)
    intrinsic_std: dict | None = None


class _Packing:
    """Column layout of the packed parameter vector."""

    def __init__(self, problem: BAProblem):
        self.n_intr = 6 if problem.optimize_distortion else 4
        self.n_frames = len(problem.poses)
        self.point_ids = sorted(problem.points)
        self.pose_base = self.n_intr
        self.point_base = self.n_intr + 7 * (self.n_frames - 1)
        self.n_params = self.point_base + 3 * len(self.point_ids)
        self.point_col = {fid: self.point_base + 3 * i for i, fid in enumerate(self.point_ids)}

    def pose_col(self, frame_idx: int) -> int:
        if frame_idx < 1:
            raise ValueError("first pose is fixed and has no columns")
        return self.pose_base + 7 * (frame_idx - 1)

    def pack(self, intrinsics: Intrinsics, poses, points) -> np.ndarray:
        x = np.zeros(self.n_params)
        x[: self.n_intr] = intrinsics.as_array()[: self.n_intr]
        for f in range(1, self.n_frames):
            c = self.pose_col(f)
            x[c : c + 3] = poses[f].p
            x[c + 3 : c + 7] = poses[f].q
        for fid in self.point_ids:
            c = self.point_col[fid]
            x[c : c + 3] = np.asarray(points[fid], dtype=float)
        return x

    def unpack(self, x: np.ndarray, problem: BAProblem):
        arr = problem.intrinsics.as_array()
        arr[: self.n_intr] = x[: self.n_intr]
        intrinsics = Intrinsics.from_array(arr)
        poses = [problem.poses[0]]
        for f in range(1, self.n_frames):
            c = self.pose_col(f)
            poses.append(Pose(x[c : c + 3].copy(), x[c + 3 : c + 7].copy()))
        points = {fid: x[self.point_col[fid] : self.point_col[fid] + 3].copy() for fid in self.point_ids}
        return intrinsics, poses, points


def _group_by_frame(problem: BAProblem):
    groups = [[] for _ in problem.poses]
    for frame_idx, fid, pixel in problem.observations:
        groups[frame_idx].append((fid, np.asarray(pixel, dtype=float)))
    return groups


def reprojection_cost(problem: BAProblem, intrinsics=None, poses=None, points=None):
    """Sum of squared pixel residuals and the stacked residual vector.

    Evaluates at the problem's initial parameters unless overrides are given.
    Residual order follows the observation list, two entries per observation.
    """
    intrinsics = problem.intrinsics if intrinsics is None else intrinsics
    poses = problem.poses if poses is None else poses
    points = problem.points if points is None else points
    residuals = np.zeros(2 * len(problem.observations))
    for i, (frame_idx, fid, pixel) in enumerate(problem.observations):
        pose = poses[frame_idx]
        pose_unit = Pose(pose.p, rotation.normalize(pose.q))
        predicted = camera.measure_feature(
            points[fid], intrinsics, pose_unit, problem.distortion_mode
        )
        residuals[2 * i : 2 * i + 2] = predicted - np.asarray(pixel, dtype=float)
    return float(residuals @ residuals), residuals


def _residuals(problem: BAProblem, packing: _Packing, x: np.ndarray) -> np.ndarray:
    intrinsics, poses, points = packing.unpack(x, problem)
    _, residuals = reprojection_cost(problem, intrinsics, poses, points)
    return residuals


def _normal_equations(problem: BAProblem, packing: _Packing, groups, x: np.ndarray):
    """Accumulate J^T J, J^T r, and the cost frame by frame.

    The Jacobian is never materialized globally: each frame touches only the
    intrinsic columns, its own pose columns, and its observed points.
    """
    intrinsics, poses, points = packing.unpack(x, problem)
    jtj = np.zeros((packing.n_params, packing.n_params))
    g = np.zeros(packing.n_params)
    cost = 0.0
    for frame_idx, group in enumerate(groups):
        if not group:
            continue
        pose = poses[frame_idx]
        q_norm = float(np.linalg.norm(pose.q))
        q_unit = pose.q / q_norm
        pose_unit = Pose(pose.p, q_unit)
        # d(q/|q|)/dq: projection orthogonal to q, scaled by 1/|q|
        q_proj = (np.eye(4) - np.outer(q_unit, q_unit)) / q_norm

        with_pose = frame_idx > 0
        n_local = packing.n_intr + (7 if with_pose else 0) + 3 * len(group)
        local = np.zeros((2 * len(group), n_local))
        res = np.zeros(2 * len(group))
        cols = list(range(packing.n_intr))
        if with_pose:
            base = packing.pose_col(frame_idx)
            cols.extend(range(base, base + 7))
        offset = packing.n_intr + (7 if with_pose else 0)
        for j, (fid, pixel) in enumerate(group):
            uv, d_intr, d_pos, d_quat, d_point = camera.feature_measurement_parts(
                intrinsics, pose_unit, points[fid], problem.distortion_mode
            )
            rows = slice(2 * j, 2 * j + 2)
            res[rows] = uv - pixel
            local[rows, : packing.n_intr] = d_intr[:, : packing.n_intr]
            if with_pose:
                local[rows, packing.n_intr : packing.n_intr + 3] = d_pos
                local[rows, packing.n_intr + 3 : packing.n_intr + 7] = d_quat @ q_proj
            col = offset + 3 * j
            local[rows, col : col + 3] = d_point
            cols.extend(range(packing.point_col[fid], packing.point_col[fid] + 3))
        idx = np.array(cols)
        jtj[np.ix_(idx, idx)] += local.T @ local
        g[idx] += local.T @ res
        cost += float(res @ res)
    return jtj, g, cost


def _apply_gauge(problem: BAProblem, packing: _Packing, x: np.ndarray, target_dist: float) -> np.ndarray:
    """Renormalize quaternions and restore the anchor-to-centroid distance."""
    x = x.copy()
    for f in range(1, packing.n_frames):
        c = packing.pose_col(f)
        x[c + 3 : c + 7] = rotation.normalize(x[c + 3 : c + 7])
    anchor = problem.poses[0].p
    point_block = x[packing.point_base :].reshape(-1, 3)
    centroid = point_block.mean(axis=0)
    dist = float(np.linalg.norm(centroid - anchor))
    if dist > 1e-12 and target_dist > 0.0:
        factor = target_dist / dist
        x[packing.point_base :] = (anchor + factor * (point_block - anchor)).ravel()
        for f in range(1, packing.n_frames):
            c = packing.pose_col(f)
            x[c : c + 3] = anchor + factor * (x[c : c + 3] - anchor)
    return x


def solve(
    problem: BAProblem,
    max_iters: int = 100,
    gradient_tol: float = 1e-8,
    cost_tol: float = 1e-12,
    initial_damping: float = 1e-4,
) -> BASolution:
    """Damped Gauss-Newton refinement with gauge fixing.

    Damping multiplies by 10 on every rejected step and divides by 10 on
    acceptance, so the accepted-step cost sequence is non-increasing.
    Terminates on small gradient, small relative cost decrease, or max_iters.
    """
    if not problem.observations:
        raise ValueError("problem has no observations")
    packing = _Packing(problem)
    groups = _group_by_frame(problem)
    # Work on an internal copy whose anchor pose is normalized; the caller's
    # problem is left untouched.
    anchor = Pose(np.asarray(problem.poses[0].p, dtype=float), rotation.normalize(problem.poses[0].q))
    problem = replace(problem, poses=[anchor] + list(problem.poses[1:]))

    point_init = np.array([problem.points[fid] for fid in packing.point_ids], dtype=float)
    target_dist = float(np.linalg.norm(point_init.mean(axis=0) - problem.poses[0].p))

    x = packing.pack(problem.intrinsics, problem.poses, problem.points)
    x = _apply_gauge(problem, packing, x, target_dist)
    residuals = _residuals(problem, packing, x)
    if not np.all(np.isfinite(residuals)):
        raise ValueError("initial parameters give a non-finite cost")
    cost = float(residuals @ residuals)
    initial_cost = cost
    cost_history = [cost]

    damping = initial_damping
    converged = False
    message = "max iterations reached"
    jtj = None
    n_iter = 0
    for n_iter in range(1, max_iters + 1):
        jtj, g, cost = _normal_equations(problem, packing, groups, x)
        if float(np.max(np.abs(g))) < gradient_tol:
            converged = True
            message = "gradient below tolerance"
            break
        scale = np.diag(jtj).copy()
        scale = np.maximum(scale, 1e-12 * max(float(scale.max()), 1.0))
        accepted = False
        while not accepted:
            system = jtj + damping * np.diag(scale)
            try:
                step = cho_solve(cho_factor(system, lower=True), -g)
            except LinAlgError:
                damping *= 10.0
                if damping > DAMPING_MAX:
                    intrinsics, poses, points = packing.unpack(x, problem)
                    return BASolution(
                        intrinsics, poses, points, cost, initial_cost, False, n_iter,
                        "normal equations breakdown", cost_history,
                    )
                continue
            trial = _apply_gauge(problem, packing, x + step, target_dist)
            try:
                trial_residuals = _residuals(problem, packing, trial)
                trial_cost = float(trial_residuals @ trial_residuals)
            except BehindCameraError:
                trial_cost = math.inf
            if np.isfinite(trial_cost) and trial_cost < cost:
                x = trial
                previous_cost = cost
                cost = trial_cost
                damping = max(damping / 10.0, DAMPING_MIN)
                accepted = True
            else:
                damping *= 10.0
                if damping > DAMPING_MAX:
                    message = "no acceptable step found"
                    break
        if not accepted:
            break
        cost_history.append(cost)
        if previous_cost - cost <= cost_tol * max(previous_cost, 1.0):
            converged = True
            message = "cost decrease below tolerance"
            break

    intrinsics, poses, points = packing.unpack(x, problem)
    intrinsic_std = _intrinsic_std(problem, packing, groups, x, jtj, cost)
    return BASolution(
        intrinsics, poses, points, cost, initial_cost, converged, n_iter, message,
        cost_history, intrinsic_std,
    )


def _intrinsic_std(problem, packing, groups, x, jtj, cost):
    """Approximate marginal standard deviations of the intrinsics from the
    normal matrix, using the residual variance estimate."""
    if jtj is None:
        jtj, _, _ = _normal_equations(problem, packing, groups, x)
    dof = 2 * len(problem.observations) - packing.n_params
    sigma2 = cost / dof if dof > 0 else 0.0
    try:
        cov = np.linalg.pinv(jtj) * sigma2
    except np.linalg.LinAlgError:
        return None
    names = ("fx", "fy", "cx", "cy", "k1", "k2")[: packing.n_intr]
    return {name: float(math.sqrt(max(cov[i, i], 0.0))) for i, name in enumerate(names)}


def problem_from_calibration(
    frames,
    report: CalibrationReport,
    max_frames: int = 150,
    min_track_length: int = 2,
    optimize_distortion: bool = True,
) -> BAProblem:
    """Build a refinement problem from tracked frames and a filter report.

    Frames are matched to the report's pose trace by timestamp and subsampled
    evenly down to max_frames. Points start at the filter's final feature
    estimates; features observed in fewer than min_track_length selected
    frames are dropped as unconstrained.
    """
    frames = list(frames)
    report_times = np.asarray(report.times, dtype=float)
    frame_index = {}
    for i, f in enumerate(frames):
        matches = np.nonzero(np.isclose(report_times, f.t, rtol=0.0, atol=1e-9))[0]
        if matches.size != 1:
            raise ValueError(f"frame at t={f.t:.6g} has no unique row in the report trace")
        frame_index[i] = int(matches[0])

    n_select = min(len(frames), max_frames)
    selected = sorted(set(np.linspace(0, len(frames) - 1, n_select).round().astype(int)))

    known = {
        fid: np.asarray(pos, dtype=float)
        for fid, pos in zip(report.feature_ids, report.feature_positions)
        if fid is not None
    }
    counts: dict[int, int] = {}
    for local in selected:
        for obs in frames[local].observations:
            if obs.feature_id in known:
                counts[obs.feature_id] = counts.get(obs.feature_id, 0) + 1
    points = {fid: known[fid] for fid, c in counts.items() if c >= min_track_length}
    if not points:
        raise ValueError("no feature has enough observations in the selected frames")

    poses = []
    observations = []
    for local_idx, frame_pos in enumerate(selected):
        row = frame_index[frame_pos]
        poses.append(Pose(np.array(report.position_trace[row]), np.array(report.quaternion_trace[row])))
        for obs in frames[frame_pos].observations:
            if obs.feature_id in points:
                observations.append((local_idx, obs.feature_id, obs.pixel()))

    return BAProblem(
        intrinsics=Intrinsics.from_array(report.final_intrinsics.as_array()),
        poses=poses,
        points=points,
        observations=observations,
        optimize_distortion=optimize_distortion,
    )
