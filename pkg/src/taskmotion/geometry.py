"""Rigid-body geometry: unit quaternions, poses, transforms, interpolation.

Quaternions are numpy arrays [w, x, y, z]. All operations are pure; nothing
here mutates its inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgument

UNIT_NORM_TOL = 1e-9
# below this geodesic angle slerp falls back to normalized lerp
SLERP_ANGLE_EPS = 1e-6


def _as_vec3(v) -> np.ndarray:
    a = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(a)):
        raise InvalidArgument(f"non-finite 3-vector: {a}")
    return a


def quat_normalize(q) -> np.ndarray:
    a = np.asarray(q, dtype=float).reshape(4)
    n = np.linalg.norm(a)
    if not np.isfinite(n) or n == 0.0:
        raise InvalidArgument(f"cannot normalize quaternion {a}")
    return a / n


def _check_unit(q) -> np.ndarray:
    a = np.asarray(q, dtype=float).reshape(4)
    if not np.all(np.isfinite(a)) or abs(np.linalg.norm(a) - 1.0) > 1e-6:
        raise InvalidArgument(f"quaternion not unit-norm: {a}")
    return a


def quat_multiply(a, b) -> np.ndarray:
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return np.array(
        [
            w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
            w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
            w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
            w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
        ]
    )


def quat_conjugate(q) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    ax = _as_vec3(axis)
    n = np.linalg.norm(ax)
    if n == 0.0:
        return np.array([1.0, 0.0, 0.0, 0.0])
    ax = ax / n
    half = 0.5 * angle
    s = math.sin(half)
    return np.array([math.cos(half), s * ax[0], s * ax[1], s * ax[2]])


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_normalize(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m) -> np.ndarray:
    """Shepperd's method; returns w >= 0 representative."""
    m = np.asarray(m, dtype=float)
    t = np.trace(m)
    if t > 0:
        s = math.sqrt(t + 1.0) * 2.0
        q = np.array(
            [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        )
    else:
        i = int(np.argmax(np.diag(m)))
        if i == 0:
            s = math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2]) * 2.0
            q = np.array(
                [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
            )
        elif i == 1:
            s = math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2]) * 2.0
            q = np.array(
                [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
            )
        else:
            s = math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1]) * 2.0
            q = np.array(
                [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
            )
    if q[0] < 0:
        q = -q
    return quat_normalize(q)


def quat_rotate(q, v) -> np.ndarray:
    return quat_to_matrix(q) @ _as_vec3(v)


def quat_angle(q) -> float:
    """Rotation angle of a unit quaternion, in [0, pi]."""
    w = min(1.0, max(-1.0, abs(float(q[0]))))
    return 2.0 * math.acos(w)


@dataclass(frozen=True)
class Pose7:
    """Position (m) plus unit quaternion orientation (w, x, y, z)."""

    position: np.ndarray
    orientation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position", _as_vec3(self.position))
        object.__setattr__(self, "orientation", quat_normalize(self.orientation))

    @staticmethod
    def identity() -> "Pose7":
        return Pose7(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.position, self.orientation])

    @staticmethod
    def from_array(a) -> "Pose7":
        a = np.asarray(a, dtype=float).reshape(7)
        return Pose7(a[:3], a[3:])

    def to_dict(self) -> dict:
        p, q = self.position, self.orientation
        return {
            "position": [float(p[0]), float(p[1]), float(p[2])],
            "orientation": [float(q[0]), float(q[1]), float(q[2]), float(q[3])],
        }

    @staticmethod
    def from_dict(d: dict) -> "Pose7":
        return Pose7(np.array(d["position"]), np.array(d["orientation"]))


@dataclass(frozen=True)
class Transform:
    """Rotation matrix + translation; composition is T_a * T_b = a then b applied right-to-left."""

    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        t = _as_vec3(self.translation)
        if np.max(np.abs(r @ r.T - np.eye(3))) > 1e-6 or abs(np.linalg.det(r) - 1.0) > 1e-6:
            raise InvalidArgument("rotation is not orthonormal with det +1")
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Transform":
        return Transform(np.eye(3), np.zeros(3))

    @staticmethod
    def from_pose(pose: Pose7) -> "Transform":
        return Transform(quat_to_matrix(pose.orientation), pose.position)

    def to_pose(self) -> Pose7:
        return Pose7(self.translation, matrix_to_quat(self.rotation))

    def compose(self, other: "Transform") -> "Transform":
        return Transform(self.rotation @ other.rotation, self.rotation @ other.translation + self.translation)

    def inverse(self) -> "Transform":
        rt = self.rotation.T
        return Transform(rt, -rt @ self.translation)

    def apply(self, point) -> np.ndarray:
        return self.rotation @ _as_vec3(point) + self.translation

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    @staticmethod
    def from_matrix(m) -> "Transform":
        m = np.asarray(m, dtype=float)
        return Transform(m[:3, :3], m[:3, 3])


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1, 0, 0], [0, c, -s], [0, s, c]], dtype=float)


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0, s], [0, 1, 0], [-s, 0, c]], dtype=float)


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0], [s, c, 0], [0, 0, 1]], dtype=float)


def rpy_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Intrinsic roll-pitch-yaw (x, then new y, then new z)."""
    return rot_x(roll) @ rot_y(pitch) @ rot_z(yaw)


def axis_angle_matrix(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    x, y, z = axis
    c, s = math.cos(angle), math.sin(angle)
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    return np.eye(3) + s * k + (1.0 - c) * (k @ k)


def apply_increment(t_curr: Transform, t, r, frame: str) -> Transform:
    """Apply a metric increment (translation t, rpy r) in the base or eef frame.

    base: the increment transform left-multiplies the current pose;
    eef: it right-multiplies.
    """
    tv = _as_vec3(t)
    rv = np.asarray(r, dtype=float).reshape(3)
    if not np.all(np.isfinite(rv)):
        raise InvalidArgument(f"non-finite rotation increment: {rv}")
    if frame not in ("base", "eef"):
        raise InvalidArgument(f"frame must be 'base' or 'eef', got {frame!r}")
    delta = Transform(rpy_matrix(rv[0], rv[1], rv[2]), tv)
    if frame == "base":
        return delta.compose(t_curr)
    return t_curr.compose(delta)


def slerp(xi_s, xi_g, alpha: float) -> np.ndarray:
    """Shortest-arc spherical interpolation between unit quaternions."""
    a = _check_unit(xi_s)
    b = _check_unit(xi_g)
    if not (0.0 <= alpha <= 1.0):
        raise InvalidArgument(f"alpha must be in [0, 1], got {alpha}")
    dot = float(np.dot(a, b))
    if dot < 0.0:
        b = -b
        dot = -dot
    dot = min(1.0, dot)
    theta = math.acos(dot)
    if theta < SLERP_ANGLE_EPS:
        return quat_normalize((1.0 - alpha) * a + alpha * b)
    s = math.sin(theta)
    return quat_normalize(
        (math.sin((1.0 - alpha) * theta) / s) * a + (math.sin(alpha * theta) / s) * b
    )


def orientation_error(xi_a, xi_b) -> np.ndarray:
    """Angle-axis vector of the rotation taking xi_a to xi_b; norm in [0, pi].

    Expressed in the xi_a body frame.
    """
    a = _check_unit(xi_a)
    b = _check_unit(xi_b)
    d = quat_multiply(quat_conjugate(a), b)
    if d[0] < 0.0:
        d = -d
    w = min(1.0, float(d[0]))
    angle = 2.0 * math.acos(w)
    vn = float(np.linalg.norm(d[1:]))
    if vn < 1e-12:
        return np.zeros(3)
    return (angle / vn) * d[1:]


def geodesic_angle(xi_a, xi_b) -> float:
    return float(np.linalg.norm(orientation_error(xi_a, xi_b)))
