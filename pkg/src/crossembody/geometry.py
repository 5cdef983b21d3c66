"""Rotation representations, poses and fixed frame transforms.

Conventions
-----------
- Quaternions are float arrays ``[w, x, y, z]``, unit norm, with ``w >= 0``.
- 6D orientations are float arrays ``[a, b]`` holding the first two columns
  of a rotation matrix (6 numbers, column ``a`` first).
- Matrices act on column vectors. Angles are radians, lengths meters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateSixD, NotARotation, ZeroQuaternion

IDENTITY_QUAT = np.array([1.0, 0.0, 0.0, 0.0])
IDENTITY_SIXD = np.array([1.0, 0.0, 0.0, 0.0, 1.0, 0.0])

_QUAT_EPS = 1e-12
_SIXD_EPS = 1e-9
_ROT_TOL = 1e-6
_UNIT_SLACK = 4.0 * np.finfo(np.float64).eps


# ---------------------------------------------------------------------------
# Quaternions
# ---------------------------------------------------------------------------


def quat_normalize(q) -> np.ndarray:
    """Scale ``q`` to unit norm and flip its sign so that ``w >= 0``."""
    q = np.asarray(q, dtype=np.float64)
    n = math.sqrt(float(q @ q))
    if not n > _QUAT_EPS:
        raise ZeroQuaternion(f"cannot normalize quaternion with norm {n:.3g}")
    # leave unit inputs untouched so that repeated normalization is bit-stable
    q = q.copy() if abs(n - 1.0) <= _UNIT_SLACK else q / n
    if q[0] < 0.0:
        q = -q
    return q


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(q1, q2) -> np.ndarray:
    """Hamilton product ``q1 * q2``, sign-flipped so that ``w >= 0``."""
    w1, x1, y1, z1 = q1
    w2, x2, y2, z2 = q2
    q = np.array([
        w1 * w2 - x1 * x2 - y1 * y2 - z1 * z2,
        w1 * x2 + x1 * w2 + y1 * z2 - z1 * y2,
        w1 * y2 - x1 * z2 + y1 * w2 + z1 * x2,
        w1 * z2 + x1 * y2 - y1 * x2 + z1 * w2,
    ])
    return -q if q[0] < 0.0 else q


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    half = 0.5 * angle
    return quat_normalize(np.concatenate([[math.cos(half)], math.sin(half) * axis]))


def quat_to_rotvec(q) -> np.ndarray:
    """Axis-angle vector (angle in [0, pi]) of a unit quaternion."""
    q = np.asarray(q, dtype=np.float64)
    w = q[0]
    v = q[1:]
    if w < 0.0:
        w, v = -w, -v
    s = math.sqrt(float(v @ v))
    if s < 1e-15:
        # first order: angle ~ 2 s, axis = v / s
        return 2.0 * v
    angle = 2.0 * math.atan2(s, w)
    return v * (angle / s)


def rotvec_to_quat(r) -> np.ndarray:
    r = np.asarray(r, dtype=np.float64)
    angle = math.sqrt(float(r @ r))
    if angle < 1e-15:
        return quat_normalize(np.concatenate([[1.0], 0.5 * r]))
    return quat_from_axis_angle(r / angle, angle)


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = q
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return np.array([
        [1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)],
        [2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)],
        [2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)],
    ])


def matrix_to_quat(m) -> np.ndarray:
    """Rotation matrix to canonical unit quaternion (Shepperd's method)."""
    m = np.asarray(m, dtype=np.float64)
    tr = m[0, 0] + m[1, 1] + m[2, 2]
    if tr > 0.0:
        s = 2.0 * math.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * math.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * math.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    return quat_normalize(q)


def geodesic_distance(q1, q2) -> float:
    """Smallest rotation angle (radians, in [0, pi]) taking ``q2`` to ``q1``."""
    d = quat_mul(q1, quat_conj(q2))
    s = math.sqrt(float(d[1:] @ d[1:]))
    return 2.0 * math.atan2(s, abs(float(d[0])))


def rotation_about(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation matrix about a unit ``axis``."""
    x, y, z = axis
    c = math.cos(angle)
    s = math.sin(angle)
    t = 1.0 - c
    return np.array([
        [t * x * x + c, t * x * y - s * z, t * x * z + s * y],
        [t * x * y + s * z, t * y * y + c, t * y * z - s * x],
        [t * x * z - s * y, t * y * z + s * x, t * z * z + c],
    ])


# ---------------------------------------------------------------------------
# 6D orientation
# ---------------------------------------------------------------------------


def sixd_to_matrix(r) -> np.ndarray:
    """Decode a 6D orientation by Gram-Schmidt on its two stored columns."""
    r = np.asarray(r, dtype=np.float64)
    a, b = r[:3], r[3:6]
    na = np.linalg.norm(a)
    if not na > _SIXD_EPS:
        raise DegenerateSixD("first 6D column has (near) zero length")
    e1 = a / na
    u = b - (e1 @ b) * e1
    nu = np.linalg.norm(u)
    if not nu > _SIXD_EPS * max(1.0, np.linalg.norm(b)):
        raise DegenerateSixD("6D columns are parallel")
    # second pass: one projection loses orthogonality when a and b are nearly parallel
    u = u - (e1 @ u) * e1
    e2 = u / np.linalg.norm(u)
    e3 = np.cross(e1, e2)
    return np.stack([e1, e2, e3], axis=1)


def is_rotation(m, tol: float = _ROT_TOL) -> bool:
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        return False
    return bool(np.abs(m.T @ m - np.eye(3)).max() <= tol and abs(np.linalg.det(m) - 1.0) <= tol)


def matrix_to_sixd(m) -> np.ndarray:
    m = np.asarray(m, dtype=np.float64)
    if not is_rotation(m):
        raise NotARotation("matrix is not orthonormal with determinant +1")
    return np.concatenate([m[:, 0], m[:, 1]])


def quat_to_sixd(q) -> np.ndarray:
    return matrix_to_sixd(quat_to_matrix(q))


def sixd_to_quat(r) -> np.ndarray:
    return matrix_to_quat(sixd_to_matrix(r))


# ---------------------------------------------------------------------------
# Poses and frame transforms
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Pose:
    """Position (meters) plus canonical unit quaternion orientation."""

    position: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY_QUAT.copy())

    def __post_init__(self):
        p = np.array(self.position, dtype=np.float64).reshape(3)
        q = quat_normalize(np.array(self.orientation, dtype=np.float64).reshape(4))
        p.flags.writeable = False
        q.flags.writeable = False
        object.__setattr__(self, "position", p)
        object.__setattr__(self, "orientation", q)

    @classmethod
    def from_matrix(cls, m) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    @property
    def rotation(self) -> np.ndarray:
        return quat_to_matrix(self.orientation)

    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.position
        return m

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: express ``other`` (given in this frame) in the parent frame."""
        return Pose(
            self.position + self.rotation @ other.position,
            quat_mul(self.orientation, other.orientation),
        )

    def inverse(self) -> "Pose":
        r_t = self.rotation.T
        return Pose(-r_t @ self.position, quat_conj(self.orientation))

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(
            np.allclose(self.position, other.position, rtol=0.0, atol=atol)
            and geodesic_distance(self.orientation, other.orientation) <= atol
        )

    def __repr__(self):
        p = np.array2string(self.position, precision=4)
        q = np.array2string(self.orientation, precision=4)
        return f"Pose(position={p}, orientation={q})"


def nearest_rotation(linear) -> np.ndarray:
    """Proper rotation associated with a linear map.

    The orthogonal polar factor is used; if it is improper (a handedness
    flip) it is negated, which in 3D yields a proper rotation and keeps
    ``nearest_rotation(inv(L)) == nearest_rotation(L).T``.
    """
    u, _, vt = np.linalg.svd(np.asarray(linear, dtype=np.float64))
    rot = u @ vt
    if np.linalg.det(rot) < 0.0:
        rot = -rot
    return rot


@dataclass(frozen=True, eq=False)
class FrameTransform:
    """Affine change of coordinates ``x -> linear @ x + translation``."""

    linear: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    orthogonal: bool = True

    def __post_init__(self):
        lin = np.array(self.linear, dtype=np.float64).reshape(3, 3)
        t = np.array(self.translation, dtype=np.float64).reshape(3)
        if not (np.all(np.isfinite(lin)) and np.all(np.isfinite(t))):
            raise ValueError("frame transform entries must be finite")
        if self.orthogonal:
            if np.abs(lin.T @ lin - np.eye(3)).max() > 1e-9:
                raise ValueError("linear part is flagged orthogonal but L^T L != I")
            if abs(abs(np.linalg.det(lin)) - 1.0) > 1e-9:
                raise ValueError("orthogonal linear part must have determinant +1 or -1")
        elif abs(np.linalg.det(lin)) < 1e-12:
            raise ValueError("linear part is singular")
        lin.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "linear", lin)
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "_rotation", nearest_rotation(lin))

    @classmethod
    def identity(cls) -> "FrameTransform":
        return cls()

    @classmethod
    def from_rotation(cls, rot, translation=(0.0, 0.0, 0.0)) -> "FrameTransform":
        return cls(rot, translation, True)

    @classmethod
    def from_array(cls, values, orthogonal: bool = True) -> "FrameTransform":
        """Build from 12 numbers: row-major 3x3 linear part then translation."""
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if values.size != 12:
            raise ValueError(f"frame transform needs 12 numbers, got {values.size}")
        return cls(values[:9].reshape(3, 3), values[9:], orthogonal)

    def to_array(self) -> np.ndarray:
        return np.concatenate([self.linear.reshape(-1), self.translation])

    @property
    def rotation(self) -> np.ndarray:
        return self._rotation

    @property
    def rotation_quat(self) -> np.ndarray:
        return matrix_to_quat(self._rotation)

    def inverse(self) -> "FrameTransform":
        inv = np.linalg.inv(self.linear)
        if self.orthogonal:
            inv = self.linear.T.copy()
        return FrameTransform(inv, -inv @ self.translation, self.orthogonal)

    def apply_vector(self, v) -> np.ndarray:
        """Map a displacement (no translation)."""
        return self.linear @ np.asarray(v, dtype=np.float64)

    def apply_point(self, p) -> np.ndarray:
        return self.linear @ np.asarray(p, dtype=np.float64) + self.translation


def apply_transform(transform: FrameTransform, pose: Pose) -> Pose:
    """Map a pose through a frame transform.

    Positions map affinely. Orientations are left-multiplied by the
    transform's proper rotation part (see :func:`nearest_rotation`).
    """
    rot = transform.rotation @ pose.rotation
    return Pose(transform.apply_point(pose.position), matrix_to_quat(rot))
