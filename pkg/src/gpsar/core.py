"""Rotation and rigid-transform primitives shared by every module.

Rotations use passive semantics: ``R_IB @ v_B`` maps a body vector into the
inertial frame. Perturbations are applied on the right, ``R Exp(dtheta)``.
The inertial frame is ENU with +z up.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

_SMALL_ANGLE = 1e-8


def skew(v) -> np.ndarray:
    """Skew-symmetric matrix such that ``skew(v) @ w == cross(v, w)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp_matrix(omega) -> np.ndarray:
    """Rodrigues formula, returning a 3x3 rotation matrix."""
    omega = np.asarray(omega, dtype=float)
    theta = np.sqrt(omega @ omega)
    W = skew(omega)
    if theta < _SMALL_ANGLE:
        return np.eye(3) + W + 0.5 * (W @ W)
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * W
        + ((1.0 - np.cos(theta)) / theta**2) * (W @ W)
    )


def so3_log_matrix(R: np.ndarray) -> np.ndarray:
    """Inverse of :func:`so3_exp_matrix` for rotation angles in [0, pi]."""
    cos_theta = np.clip(0.5 * (np.trace(R) - 1.0), -1.0, 1.0)
    theta = np.arccos(cos_theta)
    vee = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if theta < 1e-6:
        # second-order series of theta / (2 sin theta)
        return 0.5 * (1.0 + theta**2 / 6.0) * vee
    if np.pi - theta < 1e-4:
        # near pi the antisymmetric part vanishes; read the axis from R + I
        B = 0.5 * (R + np.eye(3))
        k = int(np.argmax(np.diag(B)))
        axis = B[:, k] / np.sqrt(max(B[k, k], 1e-300))
        axis /= np.linalg.norm(axis)
        if axis @ vee < 0.0:
            axis = -axis
        return theta * axis
    return (theta / (2.0 * np.sin(theta))) * vee


def right_jacobian(phi) -> np.ndarray:
    """Right Jacobian of SO(3): Exp(phi + d) ~ Exp(phi) Exp(Jr(phi) d)."""
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    W = skew(phi)
    if theta < 1e-5:
        return np.eye(3) - 0.5 * W + (W @ W) / 6.0
    return (
        np.eye(3)
        - ((1.0 - np.cos(theta)) / theta**2) * W
        + ((theta - np.sin(theta)) / theta**3) * (W @ W)
    )


def right_jacobian_inv(phi) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    theta = np.sqrt(phi @ phi)
    W = skew(phi)
    if theta < 1e-5:
        return np.eye(3) + 0.5 * W + (W @ W) / 12.0
    coef = 1.0 / theta**2 - (1.0 + np.cos(theta)) / (2.0 * theta * np.sin(theta))
    return np.eye(3) + 0.5 * W + coef * (W @ W)


def _quat_from_matrix(R: np.ndarray) -> np.ndarray:
    # Shepperd's method, returns (w, x, y, z) with w >= 0
    tr = np.trace(R)
    if tr > 0.0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = np.array([0.25 * s, (R[2, 1] - R[1, 2]) / s,
                      (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s])
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = np.array([(R[2, 1] - R[1, 2]) / s, 0.25 * s,
                      (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s])
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = np.array([(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s,
                      0.25 * s, (R[1, 2] + R[2, 1]) / s])
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = np.array([(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s,
                      (R[1, 2] + R[2, 1]) / s, 0.25 * s])
    if q[0] < 0.0:
        q = -q
    return q / np.linalg.norm(q)


def _matrix_from_quat(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def _quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


@dataclass(frozen=True, eq=False)
class Rot3:
    """Element of SO(3) stored as a unit quaternion (w, x, y, z)."""

    quat: np.ndarray = field(default_factory=lambda: np.array([1.0, 0.0, 0.0, 0.0]))

    def __post_init__(self):
        q = np.asarray(self.quat, dtype=float)
        q = q / np.linalg.norm(q)
        object.__setattr__(self, "quat", q)

    @classmethod
    def identity(cls) -> "Rot3":
        return cls()

    @classmethod
    def from_matrix(cls, R) -> "Rot3":
        R = np.asarray(R, dtype=float)
        # project onto SO(3) before extracting the quaternion
        U, _, Vt = np.linalg.svd(R)
        R = U @ np.diag([1.0, 1.0, np.linalg.det(U @ Vt)]) @ Vt
        return cls(_quat_from_matrix(R))

    @classmethod
    def exp(cls, omega) -> "Rot3":
        omega = np.asarray(omega, dtype=float)
        theta = np.linalg.norm(omega)
        if theta < _SMALL_ANGLE:
            return cls(np.concatenate([[1.0], 0.5 * omega]))
        half = 0.5 * theta
        return cls(np.concatenate([[np.cos(half)], np.sin(half) / theta * omega]))

    @classmethod
    def rz(cls, yaw: float) -> "Rot3":
        return cls.exp([0.0, 0.0, yaw])

    @cached_property
    def matrix(self) -> np.ndarray:
        m = _matrix_from_quat(self.quat)
        m.flags.writeable = False
        return m

    def log(self) -> np.ndarray:
        q = self.quat if self.quat[0] >= 0.0 else -self.quat
        vec = q[1:]
        s = np.linalg.norm(vec)
        if s < _SMALL_ANGLE:
            return 2.0 * vec
        theta = 2.0 * np.arctan2(s, q[0])
        return theta / s * vec

    def inverse(self) -> "Rot3":
        w, x, y, z = self.quat
        return Rot3(np.array([w, -x, -y, -z]))

    def compose(self, other: "Rot3") -> "Rot3":
        return Rot3(_quat_mul(self.quat, other.quat))

    def __matmul__(self, other):
        if isinstance(other, Rot3):
            return self.compose(other)
        return self.matrix @ np.asarray(other, dtype=float)

    def rotate(self, v) -> np.ndarray:
        return self.matrix @ np.asarray(v, dtype=float)

    def retract(self, dtheta) -> "Rot3":
        return self.compose(Rot3.exp(dtheta))

    def local(self, other: "Rot3") -> np.ndarray:
        """Right tangent coordinates of ``other`` around ``self``."""
        return self.inverse().compose(other).log()

    def slerp(self, other: "Rot3", alpha: float) -> "Rot3":
        return self.retract(alpha * self.local(other))

    def angle_to(self, other: "Rot3") -> float:
        return float(np.linalg.norm(self.local(other)))

    def __repr__(self):
        return f"Rot3(quat={np.array2string(self.quat, precision=6)})"


@dataclass(frozen=True, eq=False)
class Pose3:
    """Rigid transform T_AB: rotation R_AB and translation a_r_AB."""

    rotation: Rot3 = field(default_factory=Rot3)
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).copy())

    @classmethod
    def identity(cls) -> "Pose3":
        return cls()

    @classmethod
    def from_matrix(cls, T) -> "Pose3":
        T = np.asarray(T, dtype=float)
        return cls(Rot3.from_matrix(T[:3, :3]), T[:3, 3])

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation.matrix
        T[:3, 3] = self.translation
        return T

    def compose(self, other: "Pose3") -> "Pose3":
        return Pose3(
            self.rotation.compose(other.rotation),
            self.translation + self.rotation.rotate(other.translation),
        )

    def __matmul__(self, other):
        if isinstance(other, Pose3):
            return self.compose(other)
        return self.transform_point(other)

    def inverse(self) -> "Pose3":
        Rinv = self.rotation.inverse()
        return Pose3(Rinv, -Rinv.rotate(self.translation))

    def transform_point(self, p) -> np.ndarray:
        return self.translation + self.rotation.rotate(p)

    def interpolate(self, other: "Pose3", alpha: float) -> "Pose3":
        """Linear translation, spherical-linear rotation."""
        return Pose3(
            self.rotation.slerp(other.rotation, alpha),
            (1.0 - alpha) * self.translation + alpha * other.translation,
        )

    def __repr__(self):
        return (f"Pose3(t={np.array2string(self.translation, precision=4)}, "
                f"q={np.array2string(self.rotation.quat, precision=5)})")


def so3_exp(omega) -> Rot3:
    return Rot3.exp(omega)


def wrap_angle(a):
    """Map angles to (-pi, pi]."""
    a = np.asarray(a, dtype=float)
    w = np.mod(a + np.pi, 2.0 * np.pi) - np.pi
    w = np.where(w == -np.pi, np.pi, w)
    return float(w) if w.ndim == 0 else w


def euler_zyx_matrix(yaw, pitch, roll) -> np.ndarray:
    """R = Rz(yaw) Ry(pitch) Rx(roll), vectorized over leading axes."""
    yaw, pitch, roll = np.broadcast_arrays(
        np.asarray(yaw, float), np.asarray(pitch, float), np.asarray(roll, float))
    cy, sy = np.cos(yaw), np.sin(yaw)
    cp, sp = np.cos(pitch), np.sin(pitch)
    cr, sr = np.cos(roll), np.sin(roll)
    R = np.empty(yaw.shape + (3, 3))
    R[..., 0, 0] = cy * cp
    R[..., 0, 1] = cy * sp * sr - sy * cr
    R[..., 0, 2] = cy * sp * cr + sy * sr
    R[..., 1, 0] = sy * cp
    R[..., 1, 1] = sy * sp * sr + cy * cr
    R[..., 1, 2] = sy * sp * cr - cy * sr
    R[..., 2, 0] = -sp
    R[..., 2, 1] = cp * sr
    R[..., 2, 2] = cp * cr
    return R


def matrices_to_quats(R: np.ndarray) -> np.ndarray:
    """Batch conversion of (N, 3, 3) rotation matrices to (N, 4) quaternions, w >= 0."""
    R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
    m00, m11, m22 = R[:, 0, 0], R[:, 1, 1], R[:, 2, 2]
    cand = np.stack([1.0 + m00 + m11 + m22, 1.0 + m00 - m11 - m22,
                     1.0 - m00 + m11 - m22, 1.0 - m00 - m11 + m22], axis=1)
    k = np.argmax(cand, axis=1)
    q = np.empty((len(R), 4))
    s = 0.5 / np.sqrt(np.maximum(cand[np.arange(len(R)), k], 1e-300))
    # Shepperd's method: pick the largest diagonal combination for stability
    d21, d02, d10 = R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]
    s21, s02, s10 = R[:, 2, 1] + R[:, 1, 2], R[:, 0, 2] + R[:, 2, 0], R[:, 1, 0] + R[:, 0, 1]
    c = cand[np.arange(len(R)), k]
    rows = [np.stack([c, d21, d02, d10], 1), np.stack([d21, c, s10, s02], 1),
            np.stack([d02, s10, c, s21], 1), np.stack([d10, s02, s21, c], 1)]
    for j in range(4):
        sel = k == j
        q[sel] = rows[j][sel] * s[sel, None]
    q[q[:, 0] < 0] *= -1.0
    return q / np.linalg.norm(q, axis=1, keepdims=True)


def quats_to_matrices(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    w, x, y, z = q.T
    R = np.empty((len(q), 3, 3))
    R[:, 0, 0] = 1 - 2 * (y * y + z * z)
    R[:, 0, 1] = 2 * (x * y - w * z)
    R[:, 0, 2] = 2 * (x * z + w * y)
    R[:, 1, 0] = 2 * (x * y + w * z)
    R[:, 1, 1] = 1 - 2 * (x * x + z * z)
    R[:, 1, 2] = 2 * (y * z - w * x)
    R[:, 2, 0] = 2 * (x * z - w * y)
    R[:, 2, 1] = 2 * (y * z + w * x)
    R[:, 2, 2] = 1 - 2 * (x * x + y * y)
    return R


def batch_exp(omega: np.ndarray) -> np.ndarray:
    """Vectorized Rodrigues formula for (N, 3) rotation vectors."""
    omega = np.asarray(omega, dtype=float).reshape(-1, 3)
    theta = np.linalg.norm(omega, axis=1)
    small = theta < 1e-6
    safe = np.where(small, 1.0, theta)
    a = np.where(small, 1.0 - theta**2 / 6.0, np.sin(safe) / safe)
    b = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(safe)) / safe**2)
    W = np.zeros((len(omega), 3, 3))
    W[:, 0, 1], W[:, 0, 2] = -omega[:, 2], omega[:, 1]
    W[:, 1, 0], W[:, 1, 2] = omega[:, 2], -omega[:, 0]
    W[:, 2, 0], W[:, 2, 1] = -omega[:, 1], omega[:, 0]
    return np.eye(3) + a[:, None, None] * W + b[:, None, None] * (W @ W)


def batch_skew(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(-1, 3)
    W = np.zeros((len(v), 3, 3))
    W[:, 0, 1], W[:, 0, 2] = -v[:, 2], v[:, 1]
    W[:, 1, 0], W[:, 1, 2] = v[:, 2], -v[:, 0]
    W[:, 2, 0], W[:, 2, 1] = -v[:, 1], v[:, 0]
    return W


def batch_log(R: np.ndarray) -> np.ndarray:
    """Vectorized SO(3) logarithm of (N, 3, 3) matrices; falls back to the scalar path near pi."""
    R = np.asarray(R, dtype=float).reshape(-1, 3, 3)
    cos_t = 0.5 * (np.trace(R, axis1=1, axis2=2) - 1.0)
    vee = np.stack([R[:, 2, 1] - R[:, 1, 2], R[:, 0, 2] - R[:, 2, 0], R[:, 1, 0] - R[:, 0, 1]], axis=1)
    theta = np.arctan2(0.5 * np.linalg.norm(vee, axis=1), cos_t)
    small = theta < 1e-6
    safe = np.where(small, 1.0, np.sin(np.where(small, 1.0, theta)))
    scale = np.where(small, 0.5 * (1.0 + theta**2 / 6.0), theta / (2.0 * safe))
    out = scale[:, None] * vee
    for i in np.nonzero(np.pi - theta < 1e-4)[0]:
        out[i] = so3_log_matrix(R[i])
    return out


def batch_right_jacobian(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(-1, 3)
    theta = np.linalg.norm(phi, axis=1)
    small = theta < 1e-5
    t = np.where(small, 1.0, theta)
    a = np.where(small, 0.5 - theta**2 / 24.0, (1.0 - np.cos(t)) / t**2)
    b = np.where(small, 1.0 / 6.0 - theta**2 / 120.0, (t - np.sin(t)) / t**3)
    W = batch_skew(phi)
    return np.eye(3) - a[:, None, None] * W + b[:, None, None] * (W @ W)


def batch_right_jacobian_inv(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float).reshape(-1, 3)
    theta = np.linalg.norm(phi, axis=1)
    small = theta < 1e-5
    t = np.where(small, 1.0, theta)
    coef = np.where(small, 1.0 / 12.0 + theta**2 / 720.0,
                    1.0 / t**2 - (1.0 + np.cos(t)) / (2.0 * t * np.sin(t)))
    W = batch_skew(phi)
    return np.eye(3) + 0.5 * W + coef[:, None, None] * (W @ W)


@dataclass
class PoseSeries:
    """Time-stamped pose samples with linear/slerp interpolation."""

    t: np.ndarray
    position: np.ndarray
    quat: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.position = np.asarray(self.position, dtype=float).reshape(-1, 3)
        self.quat = np.asarray(self.quat, dtype=float).reshape(-1, 4)
        if not (len(self.t) == len(self.position) == len(self.quat)):
            raise ValueError("pose series arrays differ in length")

    def __len__(self):
        return len(self.t)

    @classmethod
    def from_matrices(cls, t, position, R) -> "PoseSeries":
        return cls(t, position, matrices_to_quats(np.asarray(R)))

    @property
    def rotations(self) -> np.ndarray:
        return quats_to_matrices(self.quat)

    def pose(self, i: int) -> Pose3:
        return Pose3(Rot3(self.quat[i]), self.position[i])

    def compose_right(self, T: Pose3) -> "PoseSeries":
        """Per-sample right composition T_k @ T."""
        R = self.rotations
        pos = self.position + R @ T.translation
        return PoseSeries.from_matrices(self.t, pos, R @ T.rotation.matrix)

    def interpolate(self, tq, max_gap: float | None = None) -> "PoseSeries":
        """Sample the series at times ``tq``; raises outside the stream span."""
        tq = np.atleast_1d(np.asarray(tq, dtype=float))
        if len(self.t) == 0 or tq.min() < self.t[0] - 1e-12 or tq.max() > self.t[-1] + 1e-12:
            raise ValueError("query time outside pose series span (extrapolation)")
        idx = np.clip(np.searchsorted(self.t, tq, side="right") - 1, 0, max(len(self.t) - 2, 0))
        if len(self.t) == 1:
            return PoseSeries(tq, np.repeat(self.position, len(tq), 0), np.repeat(self.quat, len(tq), 0))
        t0, t1 = self.t[idx], self.t[idx + 1]
        if max_gap is not None and np.any(t1 - t0 > max_gap):
            raise ValueError("pose gap larger than allowed around query time")
        alpha = np.clip((tq - t0) / (t1 - t0), 0.0, 1.0)
        pos = (1.0 - alpha)[:, None] * self.position[idx] + alpha[:, None] * self.position[idx + 1]
        q0, q1 = self.quat[idx], self.quat[idx + 1]
        dots = np.sum(q0 * q1, axis=1)
        q1 = np.where(dots[:, None] < 0.0, -q1, q1)
        dots = np.abs(dots)
        omega = np.arccos(np.clip(dots, -1.0, 1.0))
        so = np.sin(omega)
        lin = so < 1e-9
        safe = np.where(lin, 1.0, so)
        w0 = np.where(lin, 1.0 - alpha, np.sin((1.0 - alpha) * omega) / safe)
        w1 = np.where(lin, alpha, np.sin(alpha * omega) / safe)
        q = w0[:, None] * q0 + w1[:, None] * q1
        q /= np.linalg.norm(q, axis=1, keepdims=True)
        # exact samples at measurement timestamps
        exact = np.isclose(alpha, 0.0, atol=0.0)
        q[exact] = self.quat[idx[exact]]
        pos[exact] = self.position[idx[exact]]
        exact1 = alpha == 1.0
        q[exact1] = self.quat[idx[exact1] + 1]
        pos[exact1] = self.position[idx[exact1] + 1]
        return PoseSeries(tq, pos, q)
