"""Pinhole projection with two-coefficient radial distortion.

Projection chain for a world point z with camera position p and orientation
quaternion q (camera-to-world):

    X = R(q)^T (z - p)                      camera-frame coordinates
    a = X0 / X2,  b = X1 / X2               normalized image coordinates
    u = fx a + cx,  v = fy b + cy           ideal pixel
    r^2 = a^2 + b^2
    scale = 1 + k1 r^2 + k2 r^4

Distortion modes:
    "centered"  pixel offset from the principal point is scaled:
                (u', v') = (cx, cy) + scale * (u - cx, v - cy)
    "literal"   raw pixel coordinates are scaled:
                (u', v') = scale * (u, v)

Both modes use the same normalized radius r. The centered mode is the
conventional radial model; the literal mode also rescales the principal point
and is kept selectable for comparison runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import rotation
from .dynamics import StateLayout

DEPTH_EPSILON = 1e-6

DISTORTION_MODES = ("centered", "literal")


class BehindCameraError(ValueError):
    """Point is at or behind the camera plane; projection undefined."""


@dataclass
class Intrinsics:
    """Internal camera parameters: focal lengths, principal point, radial terms."""

    fx: float
    fy: float
    cx: float
    cy: float
    k1: float = 0.0
    k2: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.fx, self.fy, self.cx, self.cy, self.k1, self.k2])

    @classmethod
    def from_array(cls, arr) -> "Intrinsics":
        fx, fy, cx, cy, k1, k2 = np.asarray(arr, dtype=float)
        return cls(fx, fy, cx, cy, k1, k2)

    def validate(self, width: float | None = None, height: float | None = None) -> None:
        """Sanity-check focal lengths and, when an image size is given, the center."""
        if not (self.fx > 0.0 and self.fy > 0.0):
            raise ValueError("focal lengths must be positive")
        if width is not None and not (-0.5 * width <= self.cx <= 1.5 * width):
            raise ValueError(f"cx={self.cx:.3g} outside sanity bounds for width {width}")
        if height is not None and not (-0.5 * height <= self.cy <= 1.5 * height):
            raise ValueError(f"cy={self.cy:.3g} outside sanity bounds for height {height}")


@dataclass
class Pose:
    """Camera position p and orientation quaternion q (camera-to-world)."""

    p: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=float)
        self.q = np.asarray(self.q, dtype=float)

    def rotation(self) -> np.ndarray:
        return rotation.quat_to_rotation(self.q)


def camera_frame_point(pt, pose: Pose) -> np.ndarray:
    """World point expressed in the camera frame."""
    pt = np.asarray(pt, dtype=float)
    return pose.rotation().T @ (pt - pose.p)


def project_ideal(pt, intr: Intrinsics, pose: Pose, depth_epsilon: float = DEPTH_EPSILON) -> np.ndarray:
    """Undistorted pinhole projection of a world point to pixel coordinates."""
    x = camera_frame_point(pt, pose)
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite point in camera frame")
    if x[2] <= depth_epsilon:
        raise BehindCameraError(f"point depth {x[2]:.3g} <= {depth_epsilon:.3g}")
    a = x[0] / x[2]
    b = x[1] / x[2]
    return np.array([intr.fx * a + intr.cx, intr.fy * b + intr.cy])


def distort(px, intr: Intrinsics, mode: str = "centered") -> np.ndarray:
    """Apply radial distortion to a pixel."""
    u, v = np.asarray(px, dtype=float)
    a = (u - intr.cx) / intr.fx
    b = (v - intr.cy) / intr.fy
    r2 = a * a + b * b
    scale = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2
    if mode == "centered":
        return np.array([intr.cx + (u - intr.cx) * scale, intr.cy + (v - intr.cy) * scale])
    if mode == "literal":
        return np.array([u * scale, v * scale])
    raise ValueError(f"unknown distortion mode {mode!r}")


def measure_feature(
    z,
    intr: Intrinsics,
    pose: Pose,
    mode: str = "centered",
    depth_epsilon: float = DEPTH_EPSILON,
) -> np.ndarray:
    """Predicted pixel of one stationary feature: distortion applied to the pinhole projection."""
    return distort(project_ideal(z, intr, pose, depth_epsilon), intr, mode)


def back_project(px, intr: Intrinsics, pose: Pose, depth: float) -> np.ndarray:
    """World point at the given camera-frame depth along the pixel's ideal ray.

    Distortion is not inverted; the pixel is treated as an ideal projection.
    """
    if depth <= 0.0:
        raise BehindCameraError(f"back-projection depth {depth:.3g} must be positive")
    u, v = np.asarray(px, dtype=float)
    ray = np.array([(u - intr.cx) / intr.fx, (v - intr.cy) / intr.fy, 1.0])
    return pose.p + pose.rotation() @ (depth * ray)


def _distortion_with_partials(intr: Intrinsics, a: float, b: float, mode: str):
    """Distorted pixel from normalized coordinates, with partials.

    Returns (uv, d_intr, d_ab) where d_intr is 2x6 over (fx, fy, cx, cy, k1, k2)
    and d_ab is 2x2 over the normalized coordinates (a, b).
    """
    r2 = a * a + b * b
    scale = 1.0 + intr.k1 * r2 + intr.k2 * r2 * r2
    ds_dr2 = intr.k1 + 2.0 * intr.k2 * r2
    if mode == "centered":
        u = intr.cx + intr.fx * a * scale
        v = intr.cy + intr.fy * b * scale
        d_intr = np.array(
            [
                [a * scale, 0.0, 1.0, 0.0, intr.fx * a * r2, intr.fx * a * r2 * r2],
                [0.0, b * scale, 0.0, 1.0, intr.fy * b * r2, intr.fy * b * r2 * r2],
            ]
        )
        d_ab = np.array(
            [
                [intr.fx * (scale + 2.0 * a * a * ds_dr2), intr.fx * a * 2.0 * b * ds_dr2],
                [intr.fy * b * 2.0 * a * ds_dr2, intr.fy * (scale + 2.0 * b * b * ds_dr2)],
            ]
        )
    elif mode == "literal":
        u_ideal = intr.fx * a + intr.cx
        v_ideal = intr.fy * b + intr.cy
        u = u_ideal * scale
        v = v_ideal * scale
        d_intr = np.array(
            [
                [a * scale, 0.0, scale, 0.0, u_ideal * r2, u_ideal * r2 * r2],
                [0.0, b * scale, 0.0, scale, v_ideal * r2, v_ideal * r2 * r2],
            ]
        )
        d_ab = np.array(
            [
                [intr.fx * scale + u_ideal * 2.0 * a * ds_dr2, u_ideal * 2.0 * b * ds_dr2],
                [v_ideal * 2.0 * a * ds_dr2, intr.fy * scale + v_ideal * 2.0 * b * ds_dr2],
            ]
        )
    else:
        raise ValueError(f"unknown distortion mode {mode!r}")
    return np.array([u, v]), d_intr, d_ab


def feature_measurement_parts(
    intr: Intrinsics,
    pose: Pose,
    z,
    mode: str = "centered",
    depth_epsilon: float = DEPTH_EPSILON,
):
    """Predicted pixel of a feature plus partials with respect to each input block.

    Returns (uv, d_intr 2x6, d_position 2x3, d_quaternion 2x4, d_point 2x3).
    The quaternion partials treat its components as free coordinates.
    """
    z = np.asarray(z, dtype=float)
    rot_t = rotation.quat_to_rotation(pose.q).T
    delta = z - pose.p
    x = rot_t @ delta
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite point in camera frame")
    if x[2] <= depth_epsilon:
        raise BehindCameraError(f"feature depth {x[2]:.3g} <= {depth_epsilon:.3g}")
    a = x[0] / x[2]
    b = x[1] / x[2]
    uv, d_intr, d_ab = _distortion_with_partials(intr, a, b, mode)
    inv_z = 1.0 / x[2]
    d_ab_dx = np.array([[inv_z, 0.0, -a * inv_z], [0.0, inv_z, -b * inv_z]])
    d_uv_dx = d_ab @ d_ab_dx
    d_position = -d_uv_dx @ rot_t
    d_point = d_uv_dx @ rot_t
    rot_t_partials = rotation.rotation_transpose_partials(pose.q)
    # Column j: d(R^T delta)/dq_j
    dx_dq = np.column_stack([rot_t_partials[j] @ delta for j in range(4)])
    d_quaternion = d_uv_dx @ dx_dq
    return uv, d_intr, d_position, d_quaternion, d_point


def measurement_with_jacobian(
    mean: np.ndarray,
    layout: StateLayout,
    feature_index: int,
    mode: str = "centered",
    depth_epsilon: float = DEPTH_EPSILON,
):
    """Predicted pixel and the 2 x n measurement Jacobian for one feature."""
    mean = np.asarray(mean, dtype=float)
    intr = Intrinsics.from_array(mean[layout.intrinsics])
    pose = Pose(mean[layout.position], mean[layout.quaternion])
    z = mean[layout.feature_slice(feature_index)]
    uv, d_intr, d_position, d_quaternion, d_point = feature_measurement_parts(
        intr, pose, z, mode, depth_epsilon
    )
    jac = np.zeros((2, layout.n))
    jac[:, layout.intrinsics] = d_intr
    jac[:, layout.position] = d_position
    jac[:, layout.quaternion] = d_quaternion
    jac[:, layout.feature_slice(feature_index)] = d_point
    return uv, jac


def measurement_jacobian(
    mean: np.ndarray,
    layout: StateLayout,
    feature_index: int,
    mode: str = "centered",
    depth_epsilon: float = DEPTH_EPSILON,
) -> np.ndarray:
    """2 x n Jacobian of one feature's pixel prediction with respect to the state."""
    _, jac = measurement_with_jacobian(mean, layout, feature_index, mode, depth_epsilon)
    return jac
