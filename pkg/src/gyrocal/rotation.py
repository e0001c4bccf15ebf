"""Unit-quaternion algebra for attitude propagation.

Quaternions are numpy arrays [w, x, y, z] (scalar first) composed with the
Hamilton product. A state quaternion q maps camera-frame vectors into the
world frame: v_world = quat_to_rotation(q) @ v_camera.

The kinematics use the 4x4 angular-rate matrix

    W(omega) = | 0      -omega^T    |
               | omega  [omega]_x   |

with dq/dt = 0.5 * W(omega) * q, and the closed-form discrete step

    q_next = exp(dt/2 * W(omega)) * q
           = [cos(|omega| dt / 2) I + sin(|omega| dt / 2) / |omega| * W(omega)] * q,

which holds because W(omega)^2 = -|omega|^2 I.
"""

from __future__ import annotations

import math

import numpy as np

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])

# Below |omega|*dt the sin/|omega| factor switches to a series expansion.
SMALL_ANGLE_THRESHOLD = 1e-8

_MIN_NORM = 1e-12


def _require_finite(arr: np.ndarray, name: str) -> None:
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} has non-finite components")


def normalize(q) -> np.ndarray:
    """Rescale q to unit norm; flip sign so the scalar part is >= 0."""
    q = np.asarray(q, dtype=float)
    _require_finite(q, "quaternion")
    norm = math.sqrt(float(q @ q))
    if norm <= _MIN_NORM:
        raise ValueError("quaternion norm too small to normalize")
    q = q / norm
    if q[0] < 0.0:
        q = -q
    return q


def quat_to_rotation(q) -> np.ndarray:
    """3x3 rotation matrix of a unit quaternion [w, x, y, z]."""
    q = np.asarray(q, dtype=float)
    _require_finite(q, "quaternion")
    norm = math.sqrt(float(q @ q))
    # Loose guard: callers keep q unit to ~1e-6; anything further off is corruption.
    if abs(norm - 1.0) > 1e-3:
        raise ValueError(f"quaternion norm {norm:.6g} too far from 1")
    w, x, y, z = q
    return np.array(
        [
            [1.0 - 2.0 * (y * y + z * z), 2.0 * (x * y - w * z), 2.0 * (x * z + w * y)],
            [2.0 * (x * y + w * z), 1.0 - 2.0 * (x * x + z * z), 2.0 * (y * z - w * x)],
            [2.0 * (x * z - w * y), 2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y)],
        ]
    )


def omega_matrix(omega) -> np.ndarray:
    """4x4 skew-symmetric angular-rate matrix W(omega)."""
    omega = np.asarray(omega, dtype=float)
    _require_finite(omega, "angular rate")
    wx, wy, wz = omega
    return np.array(
        [
            [0.0, -wx, -wy, -wz],
            [wx, 0.0, -wz, wy],
            [wy, wz, 0.0, -wx],
            [wz, -wy, wx, 0.0],
        ]
    )


def propagation_matrix(omega, dt: float) -> np.ndarray:
    """Closed-form exp(dt/2 * W(omega)); orthogonal for any omega, dt."""
    omega = np.asarray(omega, dtype=float)
    _require_finite(omega, "angular rate")
    if dt < 0.0:
        raise ValueError("dt must be non-negative")
    speed = math.sqrt(float(omega @ omega))
    half = 0.5 * speed * dt
    if speed * dt < SMALL_ANGLE_THRESHOLD:
        # Second-order series of cos(half) and sin(half)/speed around zero rate.
        c = 1.0 - 0.5 * half * half
        k = 0.5 * dt * (1.0 - half * half / 6.0)
    else:
        c = math.cos(half)
        k = math.sin(half) / speed
    return c * np.eye(4) + k * omega_matrix(omega)


def propagate_quaternion(q, omega, dt: float) -> np.ndarray:
    """Rotate q by a constant rate omega held over dt; result is renormalized."""
    q = np.asarray(q, dtype=float)
    _require_finite(q, "quaternion")
    q_next = propagation_matrix(omega, dt) @ q
    norm = math.sqrt(float(q_next @ q_next))
    if norm <= _MIN_NORM:
        raise ValueError("propagated quaternion collapsed to zero norm")
    return q_next / norm


def quat_multiply(q1, q2) -> np.ndarray:
    """Hamilton product q1 * q2."""
    w1, x1, y1, z1 = np.asarray(q1, dtype=float)
    w2, x2, y2, z2 = np.asarray(q2, dtype=float)
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_rate_matrix(q) -> np.ndarray:
    """4x3 matrix B(q) with B(q) @ omega == 0.5 * omega_matrix(omega) @ q."""
    w, x, y, z = np.asarray(q, dtype=float)
    return 0.5 * np.array(
        [
            [-x, -y, -z],
            [w, z, -y],
            [-z, w, x],
            [y, -x, w],
        ]
    )


def rotation_to_quat(rot) -> np.ndarray:
    """Unit quaternion (w >= 0) of a rotation matrix, via the stable branch."""
    rot = np.asarray(rot, dtype=float)
    if rot.shape != (3, 3):
        raise ValueError("rotation matrix must be 3x3")
    trace = rot[0, 0] + rot[1, 1] + rot[2, 2]
    if trace > 0.0:
        s = math.sqrt(trace + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (rot[2, 1] - rot[1, 2]) / s, (rot[0, 2] - rot[2, 0]) / s, (rot[1, 0] - rot[0, 1]) / s]
        )
    elif rot[0, 0] > rot[1, 1] and rot[0, 0] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2.0
        q = np.array(
            [(rot[2, 1] - rot[1, 2]) / s, 0.25 * s, (rot[0, 1] + rot[1, 0]) / s, (rot[0, 2] + rot[2, 0]) / s]
        )
    elif rot[1, 1] > rot[2, 2]:
        s = math.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2.0
        q = np.array(
            [(rot[0, 2] - rot[2, 0]) / s, (rot[0, 1] + rot[1, 0]) / s, 0.25 * s, (rot[1, 2] + rot[2, 1]) / s]
        )
    else:
        s = math.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2.0
        q = np.array(
            [(rot[1, 0] - rot[0, 1]) / s, (rot[0, 2] + rot[2, 0]) / s, (rot[1, 2] + rot[2, 1]) / s, 0.25 * s]
        )
    return normalize(q)


def rotation_angle_between(q1, q2) -> float:
    """Geodesic angle in radians between the rotations encoded by q1, q2."""
    q1 = normalize(q1)
    q2 = normalize(q2)
    dot = abs(float(q1 @ q2))
    return 2.0 * math.acos(min(1.0, dot))


def rotation_transpose_partials(q) -> np.ndarray:
    """Partials of R(q)^T with respect to each quaternion component, shape (4, 3, 3).

    Valid for the polynomial rotation form above, treating the components as
    free coordinates (no unit-norm projection).
    """
    w, x, y, z = np.asarray(q, dtype=float)
    d_w = 2.0 * np.array([[0.0, z, -y], [-z, 0.0, x], [y, -x, 0.0]])
    d_x = 2.0 * np.array([[0.0, y, z], [y, -2.0 * x, w], [z, -w, -2.0 * x]])
    d_y = 2.0 * np.array([[-2.0 * y, x, -w], [x, 0.0, z], [w, z, -2.0 * y]])
    d_z = 2.0 * np.array([[-2.0 * z, w, x], [-w, -2.0 * z, y], [x, y, 0.0]])
    return np.stack([d_w, d_x, d_y, d_z])
