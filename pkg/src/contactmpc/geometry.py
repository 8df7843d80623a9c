"""Pose algebra and box-union geometry helpers.

Quaternions are scalar-first ``(w, x, y, z)`` throughout the package and are
kept unit-norm after every operation. All quaternion functions broadcast over
leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

QUAT_NORM_TOL = 1e-6


def quat_identity() -> np.ndarray:
    return np.array([1.0, 0.0, 0.0, 0.0])


def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Hamilton product a ⊗ b, scalar-first."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    aw, av = a[..., :1], a[..., 1:]
    bw, bv = b[..., :1], b[..., 1:]
    w = aw * bw - np.sum(av * bv, axis=-1, keepdims=True)
    v = aw * bv + bw * av + np.cross(av, bv)
    return np.concatenate([w, v], axis=-1)


def quat_conj(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    out = q.copy()
    out[..., 1:] = -out[..., 1:]
    return out


def quat_rotate(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Rotate vector(s) v by unit quaternion(s) q."""
    q = np.asarray(q, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    qw = q[..., :1]
    qv = q[..., 1:]
    t = 2.0 * np.cross(qv, v)
    return v + qw * t + np.cross(qv, t)


def quat_from_rotvec(phi: np.ndarray) -> np.ndarray:
    """Exponential map: rotation vector (axis * angle) to unit quaternion."""
    phi = np.asarray(phi, dtype=np.float64)
    angle = np.linalg.norm(phi, axis=-1, keepdims=True)
    half = 0.5 * angle
    # sinc form is stable at zero angle
    small = angle < 1e-12
    with np.errstate(invalid="ignore", divide="ignore"):
        scale = np.where(small, 0.5, np.sin(half) / np.where(small, 1.0, angle))
    w = np.cos(half)
    return np.concatenate([w, scale * phi], axis=-1)


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    return quat_from_rotvec(axis * float(angle))


def quat_from_yaw(yaw: float) -> np.ndarray:
    return quat_from_axis_angle((0.0, 0.0, 1.0), yaw)


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q[..., 0], q[..., 1], q[..., 2], q[..., 3]
    m = np.empty(q.shape[:-1] + (3, 3))
    m[..., 0, 0] = 1 - 2 * (y * y + z * z)
    m[..., 0, 1] = 2 * (x * y - w * z)
    m[..., 0, 2] = 2 * (x * z + w * y)
    m[..., 1, 0] = 2 * (x * y + w * z)
    m[..., 1, 1] = 1 - 2 * (x * x + z * z)
    m[..., 1, 2] = 2 * (y * z - w * x)
    m[..., 2, 0] = 2 * (x * z - w * y)
    m[..., 2, 1] = 2 * (y * z + w * x)
    m[..., 2, 2] = 1 - 2 * (x * x + y * y)
    return m


def rotation_distance(r: np.ndarray, r_bar: np.ndarray) -> float:
    """Orientation error 1 - <r, r_bar>^2 between unit quaternions.

    Symmetric, in [0, 1], and invariant to the sign flip of either input.
    Raises ValueError if either argument is not unit-norm within tolerance.
    """
    r = np.asarray(r, dtype=np.float64)
    r_bar = np.asarray(r_bar, dtype=np.float64)
    for q in (r, r_bar):
        n = np.linalg.norm(q, axis=-1)
        if np.any(np.abs(n - 1.0) > QUAT_NORM_TOL):
            raise ValueError("rotation_distance requires unit quaternions")
    dot = np.sum(r * r_bar, axis=-1)
    return 1.0 - dot * dot


@dataclass
class Pose:
    """Rigid transform: rotate by ``orientation`` then translate by ``position``."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=quat_identity)

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=np.float64).reshape(3)
        self.orientation = quat_normalize(
            np.asarray(self.orientation, dtype=np.float64).reshape(4)
        )

    @staticmethod
    def identity() -> "Pose":
        return Pose()

    def compose(self, other: "Pose") -> "Pose":
        return Pose(
            self.position + quat_rotate(self.orientation, other.position),
            quat_mul(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        q_inv = quat_conj(self.orientation)
        return Pose(-quat_rotate(q_inv, self.position), q_inv)

    def transform(self, p: np.ndarray) -> np.ndarray:
        return quat_rotate(self.orientation, np.asarray(p, dtype=np.float64)) + self.position

    def copy(self) -> "Pose":
        return Pose(self.position.copy(), self.orientation.copy())


def transform_keypoint_to_world(pose: Pose, p: np.ndarray) -> np.ndarray:
    """World position of an object-frame point under the object pose."""
    return pose.transform(p)


# ---------------------------------------------------------------------------
# Axis-aligned box helpers (object frame)
# ---------------------------------------------------------------------------


def box_signed_distance(p: np.ndarray, center: np.ndarray, half_extents: np.ndarray) -> np.ndarray:
    """Signed distance from point(s) to an axis-aligned box (negative inside)."""
    p = np.asarray(p, dtype=np.float64)
    d = np.abs(p - center) - half_extents
    outside = np.linalg.norm(np.maximum(d, 0.0), axis=-1)
    inside = np.minimum(np.max(d, axis=-1), 0.0)
    return outside + inside


def box_closest_point(p: np.ndarray, center, half_extents):
    """Closest surface point and outward normal of a box for a single point.

    Works for points inside the box (snaps to the nearest face).
    """
    p = np.asarray(p, dtype=np.float64)
    center = np.asarray(center, dtype=np.float64)
    half_extents = np.asarray(half_extents, dtype=np.float64)
    local = p - center
    clamped = np.clip(local, -half_extents, half_extents)
    if np.any(clamped != local):
        surf = clamped
        normal = local - clamped
        normal = normal / np.linalg.norm(normal)
    else:
        # interior: push out through the nearest face
        margins = half_extents - np.abs(local)
        axis = int(np.argmin(margins))
        sign = 1.0 if local[axis] >= 0.0 else -1.0
        surf = local.copy()
        surf[axis] = sign * half_extents[axis]
        normal = np.zeros(3)
        normal[axis] = sign
    return center + surf, normal


def union_signed_distance(p: np.ndarray, boxes) -> np.ndarray:
    """Signed distance to a union of boxes (exact outside, lower bound inside)."""
    dists = [box_signed_distance(p, c, h) for c, h in boxes]
    return np.min(np.stack(dists, axis=0), axis=0)


def point_strictly_inside_union(p: np.ndarray, boxes, tol: float = 1e-9) -> bool:
    for c, h in boxes:
        if box_signed_distance(p, np.asarray(c), np.asarray(h)) < -tol:
            return True
    return False
