"""Rigid transforms, Euler rotations and the Jacobians used for height variance.

Conventions
-----------
* Rotations are intrinsic Z-Y'-X'' (yaw, then pitch, then roll):
  ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``.
* A :class:`Pose` maps points from its child frame into its parent frame,
  ``p_parent = R @ p_child + t``.
* Pose parameters and covariance are ordered ``[tx, ty, tz, roll, pitch, yaw]``.
* Frames that carry heights (inertial, map) have NED-aligned axes. The map
  stores up-positive elevation ``h = -z``; :func:`height_measurement` is the
  only place that flip happens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

GIMBAL_TOL = 1e-9
FD_STEP = 1e-6


def rot_x(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(a: float) -> np.ndarray:
    c, s = math.cos(a), math.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_matrix(yaw: float, pitch: float, roll: float) -> np.ndarray:
    cy, sy = math.cos(yaw), math.sin(yaw)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cr, sr = math.cos(roll), math.sin(roll)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def _frozen(a, shape) -> np.ndarray:
    arr = np.array(a, dtype=np.float64).reshape(shape)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Rotation:
    """Yaw-pitch-roll rotation (radians)."""

    yaw: float = 0.0
    pitch: float = 0.0
    roll: float = 0.0

    @property
    def matrix(self) -> np.ndarray:
        return euler_matrix(self.yaw, self.pitch, self.roll)

    @classmethod
    def from_matrix(cls, R: np.ndarray) -> "Rotation":
        R = np.asarray(R, dtype=np.float64)
        pitch = -math.asin(max(-1.0, min(1.0, R[2, 0])))
        roll = math.atan2(R[2, 1], R[2, 2])
        yaw = math.atan2(R[1, 0], R[0, 0])
        return cls(yaw=yaw, pitch=pitch, roll=roll)

    def inverse(self) -> "Rotation":
        return Rotation.from_matrix(self.matrix.T)

    def compose(self, other: "Rotation") -> "Rotation":
        return Rotation.from_matrix(self.matrix @ other.matrix)

    @property
    def angles(self) -> np.ndarray:
        """Angles in covariance order ``[roll, pitch, yaw]``."""
        return np.array([self.roll, self.pitch, self.yaw])


@dataclass(frozen=True)
class Pose:
    """Rigid transform with a 6x6 covariance over ``[t, roll, pitch, yaw]``."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: Rotation = field(default_factory=Rotation)
    covariance: np.ndarray = field(default_factory=lambda: np.zeros((6, 6)))

    def __post_init__(self):
        object.__setattr__(self, "translation", _frozen(self.translation, (3,)))
        object.__setattr__(self, "covariance", _frozen(self.covariance, (6, 6)))
        if abs(abs(self.rotation.pitch) - math.pi / 2) < GIMBAL_TOL:
            raise ValueError("pitch of +-pi/2 is a gimbal-lock configuration")
        if not np.all(np.isfinite(self.translation)) or not np.all(
            np.isfinite(self.rotation.angles)
        ):
            raise ValueError("pose must be finite")
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-12):
            raise ValueError("pose covariance must be symmetric")
        if np.linalg.eigvalsh(self.covariance).min() < -1e-10:
            raise ValueError("pose covariance must be positive semi-definite")

    @classmethod
    def from_params(cls, params, covariance=None) -> "Pose":
        p = np.asarray(params, dtype=np.float64)
        rot = Rotation(yaw=p[5], pitch=p[4], roll=p[3])
        cov = np.zeros((6, 6)) if covariance is None else covariance
        return cls(p[:3], rot, cov)

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation.angles])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.matrix
        T[:3, 3] = self.translation
        return T

    @property
    def rotation_covariance(self) -> np.ndarray:
        return self.covariance[3:, 3:]

    @property
    def translation_covariance(self) -> np.ndarray:
        return self.covariance[:3, :3]

    def with_covariance(self, covariance) -> "Pose":
        return Pose(self.translation, self.rotation, covariance)

    def inverse(self) -> "Pose":
        """Inverse transform; covariance is carried over first-order."""
        R = self.rotation.matrix
        inv = Pose(-R.T @ self.translation, Rotation.from_matrix(R.T))
        if not self.covariance.any():
            return inv
        J = _numeric_jacobian(lambda q: Pose.from_params(q).inverse().params, self.params)
        return inv.with_covariance(_sym(J @ self.covariance @ J.T))

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` first, then ``self``.

        Both covariances are propagated to first order with numeric Jacobians
        of the composed parameters; the two poses are treated as independent.
        """
        R = self.rotation.matrix
        out = Pose(
            R @ other.translation + self.translation,
            Rotation.from_matrix(R @ other.rotation.matrix),
        )
        if not (self.covariance.any() or other.covariance.any()):
            return out
        pa, pb = self.params, other.params
        cov = np.zeros((6, 6))
        if self.covariance.any():
            Ja = _numeric_jacobian(lambda q: _compose_params(q, pb), pa)
            cov += Ja @ self.covariance @ Ja.T
        if other.covariance.any():
            Jb = _numeric_jacobian(lambda q: _compose_params(pa, q), pb)
            cov += Jb @ other.covariance @ Jb.T
        return out.with_covariance(_sym(cov))

    def __matmul__(self, other: "Pose") -> "Pose":
        return self.compose(other)


def _sym(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def _compose_params(pa, pb) -> np.ndarray:
    a = Pose.from_params(pa)
    b = Pose.from_params(pb)
    R = a.rotation.matrix
    t = R @ b.translation + a.translation
    rot = Rotation.from_matrix(R @ b.rotation.matrix)
    return np.concatenate([t, rot.angles])


def _numeric_jacobian(f, x, step: float = FD_STEP) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    f0 = np.asarray(f(x))
    J = np.zeros((f0.size, x.size))
    for k in range(x.size):
        dx = np.zeros_like(x)
        dx[k] = step
        d = np.asarray(f(x + dx)) - np.asarray(f(x - dx))
        # angle outputs may wrap across +-pi
        if f0.size == 6:
            d[3:] = (d[3:] + math.pi) % (2 * math.pi) - math.pi
        J[:, k] = d / (2 * step)
    return J


@dataclass(frozen=True)
class FrameGraph:
    """Inertial (I), base (B), sensor (S) and map (M) frames.

    ``inertial_to_base`` maps base-frame points into the inertial frame,
    ``base_to_sensor`` maps sensor-frame points into the base frame (static
    extrinsic) and ``base_in_map`` places the base inside the map.
    """

    inertial_to_base: Pose
    base_to_sensor: Pose
    base_in_map: Pose

    def sensor_in_inertial(self) -> Pose:
        return self.inertial_to_base @ self.base_to_sensor

    def sensor_in_map(self) -> Pose:
        return self.base_in_map @ self.base_to_sensor


def transform_point(pose: Pose, p) -> np.ndarray:
    """``R @ p + t``; ``p`` may be a single point or an ``(N, 3)`` array."""
    p = np.asarray(p, dtype=np.float64)
    return p @ pose.rotation.matrix.T + pose.translation


def height_measurement(point_S, sensor_to_map: Pose):
    """Up-positive map elevation of a sensor-frame point.

    The point is rotated into map orientation, offset by the sensor position
    and projected onto the vertical axis. Map axes are NED-aligned, so the
    elevation is the negated third component.
    """
    return -transform_point(sensor_to_map, point_S)[..., 2]


def jacobian_range(point_S, sensor_to_map: Pose) -> np.ndarray:
    """d(height)/d(point_S); the negated third row of the rotation matrix."""
    return -sensor_to_map.rotation.matrix[2].copy()


def perturbed_height_rows(sensor_to_map: Pose, step: float = FD_STEP):
    """Third rotation rows for +-step on each of roll, pitch, yaw.

    Returns ``(plus, minus)``, each ``(3, 3)``; row k belongs to angle k. With
    these, the rotation Jacobian of any batch of points is a pair of matrix
    products, which is how the map update evaluates it.
    """
    rot = sensor_to_map.rotation
    plus = np.empty((3, 3))
    minus = np.empty((3, 3))
    base = np.array([rot.roll, rot.pitch, rot.yaw])
    for k in range(3):
        for sign, out in ((1.0, plus), (-1.0, minus)):
            a = base.copy()
            a[k] += sign * step
            out[k] = euler_matrix(a[2], a[1], a[0])[2]
    return plus, minus


def jacobian_rotation(point_S, sensor_to_map: Pose, step: float = FD_STEP) -> np.ndarray:
    """d(height)/d(roll, pitch, yaw) by central differences.

    The translation does not depend on the angles, so it cancels in the
    difference and only the rotated point matters.
    """
    p = np.asarray(point_S, dtype=np.float64)
    plus, minus = perturbed_height_rows(sensor_to_map, step)
    return -((p @ plus.T) - (p @ minus.T)) / (2.0 * step)
