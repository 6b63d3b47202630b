"""Geometry and sensor-model primitives shared by every other module.

Conventions used throughout the package:

* ``RigidTransform`` stores a rotation matrix plus translation and maps
  points *from* its source frame *into* its destination frame.
* The calibration extrinsic maps event-camera coordinates into LiDAR
  coordinates, so projecting a LiDAR point into the camera applies the
  inverse of the extrinsic.
* Rotations are stored as matrices; optimizers perturb them through a
  3-vector axis-angle (rotation-vector) local parameterization.
* Camera distortion is the radial-tangential model with coefficients
  ``(k1, k2, p1, p2, k3)``; all-zero coefficients disable it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from .errors import NonPositiveDepth

_ORTHONORMALITY_TOL = 1e-9


class Event(NamedTuple):
    """A single brightness-change sample: pixel, timestamp, polarity."""

    x: float
    y: float
    t: float
    p: int


def skew(v: np.ndarray) -> np.ndarray:
    """Cross-product matrix of a 3-vector."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(omega_dt: np.ndarray) -> np.ndarray:
    """Rodrigues exponential of a rotation vector (radians)."""
    omega_dt = np.asarray(omega_dt, dtype=float)
    angle = float(np.linalg.norm(omega_dt))
    K = skew(omega_dt)
    if angle < 1e-8:
        # Second-order series; exact enough below the switch point.
        return np.eye(3) + K + 0.5 * (K @ K)
    K /= angle
    return np.eye(3) + np.sin(angle) * K + (1.0 - np.cos(angle)) * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    """Rotation vector of a rotation matrix (inverse of :func:`so3_exp`)."""
    trace = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    angle = float(np.arccos(trace))
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-8:
        return w
    if np.pi - angle < 1e-6:
        # Near pi the antisymmetric part vanishes; recover the axis from
        # the symmetric part instead.
        A = (R + np.eye(3)) * 0.5
        axis = np.sqrt(np.maximum(np.diag(A), 0.0))
        k = int(np.argmax(axis))
        axis = A[:, k] / max(axis[k], 1e-12)
        axis /= np.linalg.norm(axis)
        if np.dot(axis, w) < 0:
            axis = -axis
        return axis * angle
    return w * (angle / np.sin(angle))


def euler_zyx_to_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    """ZYX Euler angles to a rotation matrix: Rz(yaw) @ Ry(pitch) @ Rx(roll)."""
    cz, sz = np.cos(yaw), np.sin(yaw)
    cy, sy = np.cos(pitch), np.sin(pitch)
    cx, sx = np.cos(roll), np.sin(roll)
    Rz = np.array([[cz, -sz, 0.0], [sz, cz, 0.0], [0.0, 0.0, 1.0]])
    Ry = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
    Rx = np.array([[1.0, 0.0, 0.0], [0.0, cx, -sx], [0.0, sx, cx]])
    return Rz @ Ry @ Rx


def rotation_to_euler_zyx(R: np.ndarray) -> tuple[float, float, float]:
    """(yaw, pitch, roll) such that euler_zyx_to_rotation reproduces R."""
    pitch = float(np.arcsin(np.clip(-R[2, 0], -1.0, 1.0)))
    if abs(R[2, 0]) < 1.0 - 1e-10:
        yaw = float(np.arctan2(R[1, 0], R[0, 0]))
        roll = float(np.arctan2(R[2, 1], R[2, 2]))
    else:
        # Gimbal lock: pin roll to zero and fold everything into yaw.
        yaw = float(np.arctan2(-R[0, 1], R[1, 1]))
        roll = 0.0
    return yaw, pitch, roll


def rotation_angle_deg(Ra: np.ndarray, Rb: np.ndarray | None = None) -> float:
    """Geodesic angle of Ra (or of the relative rotation Ra @ Rb.T), degrees."""
    R = Ra if Rb is None else Ra @ Rb.T
    c = np.clip((np.trace(R) - 1.0) * 0.5, -1.0, 1.0)
    return float(np.degrees(np.arccos(c)))


@dataclass(frozen=True)
class RigidTransform:
    """SE(3) element: ``apply(p) = rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err > _ORTHONORMALITY_TOL or np.linalg.det(R) < 0.0:
            raise ValueError(f"rotation is not orthonormal (|R'R - I| = {err:.2e})")
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, M: np.ndarray) -> "RigidTransform":
        M = np.asarray(M, dtype=float)
        if M.shape != (4, 4):
            raise ValueError("expected a 4x4 homogeneous matrix")
        return cls(M[:3, :3], M[:3, 3])

    @classmethod
    def from_rotation_vector(cls, rvec: np.ndarray, translation=None) -> "RigidTransform":
        t = np.zeros(3) if translation is None else translation
        return cls(so3_exp(rvec), t)

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.rotation
        M[:3, 3] = self.translation
        return M

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        return RigidTransform(
            _renormalize(self.rotation @ other.rotation),
            self.rotation @ other.translation + self.translation,
        )

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt.copy(), -Rt @ self.translation)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform a 3-vector or an (N, 3) array of points."""
        points = np.asarray(points, dtype=float)
        if points.ndim == 1:
            return self.rotation @ points + self.translation
        return points @ self.rotation.T + self.translation


def _renormalize(R: np.ndarray) -> np.ndarray:
    """Project a near-rotation back onto SO(3); keeps long compositions clean."""
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        out = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return out


def transform_point(T: RigidTransform, p: np.ndarray) -> np.ndarray:
    """R @ p + t for a single point."""
    return T.apply(np.asarray(p, dtype=float))


def se3_log(T: RigidTransform) -> np.ndarray:
    """6-vector [rho, theta] with T = se3_exp of it (full SE(3) log)."""
    theta = so3_log(T.rotation)
    V = _so3_left_jacobian(theta)
    rho = np.linalg.solve(V, T.translation)
    return np.concatenate([rho, theta])


def se3_exp(xi: np.ndarray) -> RigidTransform:
    """SE(3) exponential of a 6-vector [rho, theta]."""
    xi = np.asarray(xi, dtype=float)
    rho, theta = xi[:3], xi[3:]
    return RigidTransform(so3_exp(theta), _so3_left_jacobian(theta) @ rho)


def _so3_left_jacobian(theta: np.ndarray) -> np.ndarray:
    angle = float(np.linalg.norm(theta))
    K = skew(theta)
    if angle < 1e-8:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    a2 = angle * angle
    return (
        np.eye(3)
        + ((1.0 - np.cos(angle)) / a2) * K
        + ((angle - np.sin(angle)) / (a2 * angle)) * (K @ K)
    )


def interpolate_transform(T: RigidTransform, alpha: float) -> RigidTransform:
    """Fractional rigid motion T^alpha along the constant-velocity screw."""
    return se3_exp(alpha * se3_log(T))


@dataclass(frozen=True)
class CameraIntrinsics:
    """Pinhole model with radial-tangential distortion (k1, k2, p1, p2, k3)."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int
    distortion: np.ndarray = field(default_factory=lambda: np.zeros(5))

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the sensor")
        d = np.zeros(5)
        given = np.asarray(self.distortion, dtype=float).ravel()
        d[: given.size] = given
        object.__setattr__(self, "distortion", d)

    @property
    def has_distortion(self) -> bool:
        return bool(np.any(self.distortion != 0.0))

    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )


def distort_normalized(xy: np.ndarray, dist: np.ndarray) -> np.ndarray:
    """Apply radial-tangential distortion to (N, 2) normalized coordinates."""
    k1, k2, p1, p2, k3 = dist
    x, y = xy[..., 0], xy[..., 1]
    r2 = x * x + y * y
    radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
    xd = x * radial + 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
    yd = y * radial + p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
    return np.stack([xd, yd], axis=-1)


def undistort_normalized(xy_d: np.ndarray, dist: np.ndarray, iterations: int = 20) -> np.ndarray:
    """Invert the distortion map by fixed-point iteration."""
    k1, k2, p1, p2, k3 = dist
    xd, yd = xy_d[..., 0], xy_d[..., 1]
    x, y = xd.copy(), yd.copy()
    for _ in range(iterations):
        r2 = x * x + y * y
        radial = 1.0 + r2 * (k1 + r2 * (k2 + r2 * k3))
        dx = 2.0 * p1 * x * y + p2 * (r2 + 2.0 * x * x)
        dy = p1 * (r2 + 2.0 * y * y) + 2.0 * p2 * x * y
        x = (xd - dx) / radial
        y = (yd - dy) / radial
    return np.stack([x, y], axis=-1)


def project_pinhole(point_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Project camera-frame point(s) to pixel coordinates.

    Raises :class:`NonPositiveDepth` if any point has z <= 0.
    """
    pts = np.asarray(point_cam, dtype=float)
    single = pts.ndim == 1
    pts = np.atleast_2d(pts)
    z = pts[:, 2]
    if np.any(z <= 0.0):
        raise NonPositiveDepth("point depth must be positive for projection")
    xy = pts[:, :2] / z[:, None]
    if intr.has_distortion:
        xy = distort_normalized(xy, intr.distortion)
    uv = np.empty_like(xy)
    uv[:, 0] = intr.fx * xy[:, 0] + intr.cx
    uv[:, 1] = intr.fy * xy[:, 1] + intr.cy
    return uv[0] if single else uv


def pixels_to_rays(uv: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pixel coordinates to undistorted unit-depth rays (N, 3)."""
    uv = np.atleast_2d(np.asarray(uv, dtype=float))
    xy = np.empty_like(uv)
    xy[:, 0] = (uv[:, 0] - intr.cx) / intr.fx
    xy[:, 1] = (uv[:, 1] - intr.cy) / intr.fy
    if intr.has_distortion:
        xy = undistort_normalized(xy, intr.distortion)
    return np.concatenate([xy, np.ones((xy.shape[0], 1))], axis=1)


@dataclass
class PointCloudFrame:
    """Timestamped 3D points with reflectivity, in one sensor frame.

    ``positions`` is (N, 3) meters, ``reflectivity`` (N,) in [0, 1] (clamped
    on construction), ``timestamps`` (N,) seconds.
    """

    positions: np.ndarray
    reflectivity: np.ndarray
    timestamps: np.ndarray

    def __post_init__(self):
        self.positions = np.asarray(self.positions, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(self.positions)):
            raise ValueError("cloud positions must be finite")
        n = self.positions.shape[0]
        self.reflectivity = np.clip(
            np.asarray(self.reflectivity, dtype=float).reshape(n), 0.0, 1.0
        )
        self.timestamps = np.asarray(self.timestamps, dtype=float).reshape(n)

    def __len__(self) -> int:
        return self.positions.shape[0]

    def transformed(self, T: RigidTransform) -> "PointCloudFrame":
        return PointCloudFrame(T.apply(self.positions), self.reflectivity.copy(), self.timestamps.copy())
