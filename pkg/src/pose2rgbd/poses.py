"""Absolute/relative pose algebra and network input encoding.

Quaternions are stored as (w, x, y, z) with unit norm and the double cover
resolved by w >= 0. Euler angles follow the intrinsic Z-Y-X (yaw-pitch-roll)
convention common for aerial vehicles. Translation components are mapped to
[-1, 1] by min-max normalization over per-axis bounds; rotation components are
already bounded and pass through (quaternion mode) or are scaled by their
angular extremes (Euler mode).
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

QUAT_NORM_TOL = 1e-6
GIMBAL_LOCK_TOL = 1e-6

MODE_EULER = "6dof"
MODE_QUAT = "6dof-quat"


def _canonical_quat(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (4,):
        raise ValueError("quaternion must have 4 components (w, x, y, z)")
    norm = float(np.linalg.norm(q))
    if abs(norm - 1.0) > QUAT_NORM_TOL:
        raise ValueError(f"quaternion norm {norm:.8f} is not within {QUAT_NORM_TOL} of 1")
    q = q / norm
    if q[0] < 0:
        q = -q
    return q


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ]
    )


def quat_conj(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_to_matrix(q) @ np.asarray(v, dtype=np.float64)


def quat_angle(a: np.ndarray, b: np.ndarray | None = None) -> float:
    """Rotation angle (radians) taking a to b (identity if omitted),
    double cover folded out."""
    dot = abs(float(a[0])) if b is None else abs(float(np.dot(a, b)))
    return 2.0 * math.acos(min(1.0, dot))


@dataclass
class EulerAngles:
    """Roll, pitch, yaw in radians; pitch is clamped to [-pi/2, pi/2]."""

    roll: float
    pitch: float
    yaw: float
    gimbal_lock: bool = False

    def as_array(self) -> np.ndarray:
        return np.array([self.roll, self.pitch, self.yaw])


@dataclass
class Pose:
    """Absolute camera state: translation in meters plus a unit quaternion."""

    translation: np.ndarray
    rotation: np.ndarray

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64)
        if self.translation.shape != (3,):
            raise ValueError("translation must have 3 components")
        self.rotation = _canonical_quat(self.rotation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.zeros(3), np.array([1.0, 0.0, 0.0, 0.0]))


@dataclass
class RelativePose:
    """Rigid transform between two camera frames.

    ``scaled`` distinguishes metric translations from the unitless ones a
    monocular estimator produces.
    """

    rotation: np.ndarray
    translation: np.ndarray
    scaled: bool = True

    def __post_init__(self):
        self.translation = np.asarray(self.translation, dtype=np.float64)
        self.rotation = _canonical_quat(self.rotation)

    @classmethod
    def identity(cls, scaled: bool = True) -> "RelativePose":
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3), scaled)


@dataclass
class PoseBounds:
    """Per-axis translation extremes (meters) used for input normalization."""

    minimum: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        self.minimum = np.asarray(self.minimum, dtype=np.float64)
        self.maximum = np.asarray(self.maximum, dtype=np.float64)
        if self.minimum.shape != (3,) or self.maximum.shape != (3,):
            raise ValueError("bounds must cover exactly the 3 translation axes")
        if not np.all(self.minimum < self.maximum):
            raise ValueError("degenerate bounds: min must be < max on every axis")

    @classmethod
    def from_translations(cls, translations: np.ndarray, pad: float = 0.5) -> "PoseBounds":
        """Observed extremes; axes with no spread are padded by ``pad`` meters."""
        t = np.asarray(translations, dtype=np.float64).reshape(-1, 3)
        lo, hi = t.min(axis=0), t.max(axis=0)
        flat = hi - lo <= 0
        lo[flat] -= pad
        hi[flat] += pad
        return cls(lo, hi)

    def clamp(self, translation: np.ndarray) -> np.ndarray:
        return np.clip(translation, self.minimum, self.maximum)


def euler_to_quat(e: EulerAngles) -> np.ndarray:
    """Unit quaternion for intrinsic Z-Y-X rotation, canonicalized to w >= 0."""
    cr, sr = math.cos(e.roll / 2), math.sin(e.roll / 2)
    cp, sp = math.cos(e.pitch / 2), math.sin(e.pitch / 2)
    cy, sy = math.cos(e.yaw / 2), math.sin(e.yaw / 2)
    q = np.array(
        [
            cr * cp * cy + sr * sp * sy,
            sr * cp * cy - cr * sp * sy,
            cr * sp * cy + sr * cp * sy,
            cr * cp * sy - sr * sp * cy,
        ]
    )
    return _canonical_quat(q)


def quat_to_euler(q: np.ndarray) -> EulerAngles:
    """Inverse of euler_to_quat; yaw is zeroed by convention at gimbal lock."""
    q = _canonical_quat(q)
    w, x, y, z = q
    sin_pitch = 2.0 * (w * y - x * z)
    sin_pitch = max(-1.0, min(1.0, sin_pitch))
    pitch = math.asin(sin_pitch)
    if abs(pitch) >= math.pi / 2 - GIMBAL_LOCK_TOL:
        # roll and yaw share an axis; fold everything into roll
        r01 = 2.0 * (x * y - w * z)
        r11 = 1.0 - 2.0 * (x * x + z * z)
        roll = math.atan2(r01 if pitch > 0 else -r01, r11)
        return EulerAngles(roll, pitch, 0.0, gimbal_lock=True)
    roll = math.atan2(2.0 * (y * z + w * x), 1.0 - 2.0 * (x * x + y * y))
    yaw = math.atan2(2.0 * (x * y + w * z), 1.0 - 2.0 * (y * y + z * z))
    return EulerAngles(roll, pitch, yaw)


def encoded_length(mode: str) -> int:
    if mode == MODE_EULER:
        return 6
    if mode == MODE_QUAT:
        return 7
    raise ValueError(f"unknown input mode {mode!r}")


def normalize_pose(pose: Pose, bounds: PoseBounds, mode: str = MODE_QUAT) -> np.ndarray:
    """Encode a pose as a [-1, 1] vector: 6 values (Euler) or 7 (quaternion)."""
    t = pose.translation
    if np.any(t < bounds.minimum) or np.any(t > bounds.maximum):
        warnings.warn("pose translation outside bounds; clamping", stacklevel=2)
        t = bounds.clamp(t)
    t_norm = 2.0 * (t - bounds.minimum) / (bounds.maximum - bounds.minimum) - 1.0
    if mode == MODE_QUAT:
        return np.concatenate([t_norm, pose.rotation])
    if mode == MODE_EULER:
        e = quat_to_euler(pose.rotation)
        angles = np.array([e.roll / math.pi, e.pitch / (math.pi / 2), e.yaw / math.pi])
        return np.concatenate([t_norm, angles])
    raise ValueError(f"unknown input mode {mode!r}")


def denormalize_pose(vec: np.ndarray, bounds: PoseBounds, mode: str = MODE_QUAT) -> Pose:
    """Exact inverse of normalize_pose for in-range encodings."""
    vec = np.asarray(vec, dtype=np.float64)
    n = encoded_length(mode)
    if vec.shape != (n,):
        raise ValueError(f"encoded pose for mode {mode!r} must have {n} components")
    if np.any(np.abs(vec) > 1.0 + 1e-9):
        raise ValueError("encoded pose components must lie in [-1, 1]")
    t = (vec[:3] + 1.0) / 2.0 * (bounds.maximum - bounds.minimum) + bounds.minimum
    if mode == MODE_QUAT:
        q = vec[3:]
        norm = float(np.linalg.norm(q))
        if norm == 0.0:
            raise ValueError("quaternion part of encoded pose is zero")
        return Pose(t, q / norm)
    e = EulerAngles(
        roll=vec[3] * math.pi, pitch=vec[4] * (math.pi / 2), yaw=vec[5] * math.pi
    )
    return Pose(t, euler_to_quat(e))


def relative_from_absolute(a: Pose, b: Pose) -> RelativePose:
    """Transform of b expressed in a's frame."""
    rel_q = quat_mul(quat_conj(a.rotation), b.rotation)
    rel_t = quat_rotate(quat_conj(a.rotation), b.translation - a.translation)
    return RelativePose(rel_q, rel_t, scaled=True)


def compose_relative_poses(chain: list[RelativePose]) -> list[Pose]:
    """Cumulative composition from the identity: pseudo-absolute poses
    relative to the key frame at the start of the chain."""
    if not chain:
        raise ValueError("cannot compose an empty chain")
    poses: list[Pose] = []
    q = np.array([1.0, 0.0, 0.0, 0.0])
    t = np.zeros(3)
    for rel in chain:
        t = t + quat_rotate(q, rel.translation)
        q = quat_mul(q, rel.rotation)
        q = q / np.linalg.norm(q)
        poses.append(Pose(t.copy(), q))
    return poses
