"""Unified 76-dim action vocabulary shared by human and robot embodiments.

Vector layout (indices into the packed vector)::

    human  0..47   left wrist pos (3) + 6D (6) | right wrist pos + 6D |
                   left fingertips 5x3 | right fingertips 5x3
    robot 48..61   left joints (6) + gripper | right joints (6) + gripper
    eef   62..75   left pos (3) + quat (4) | right pos + quat

Fingertips are ordered thumb, index, middle, ring, pinky. Grippers use
0 = closed, 1 = open.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import BadLength
from .geometry import (
    IDENTITY_QUAT,
    IDENTITY_SIXD,
    Pose,
    matrix_to_quat,
    quat_normalize,
    quat_to_sixd,
    sixd_to_matrix,
)

HUMAN_DIM = 48
ROBOT_DIM = 14
EEF_DIM = 14
ACTION_DIM = HUMAN_DIM + ROBOT_DIM + EEF_DIM
assert ACTION_DIM == 76

SIDES = ("left", "right")
FINGERS = ("thumb", "index", "middle", "ring", "pinky")

HUMAN = slice(0, 48)
ROBOT = slice(48, 62)
EEF = slice(62, 76)


def _side_index(side: str) -> int:
    if side not in SIDES:
        raise ValueError(f"side must be 'left' or 'right', got {side!r}")
    return SIDES.index(side)


def wrist_pos_slice(side):
    k = 9 * _side_index(side)
    return slice(k, k + 3)


def wrist_sixd_slice(side):
    k = 9 * _side_index(side) + 3
    return slice(k, k + 6)


def fingertips_slice(side):
    k = 18 + 15 * _side_index(side)
    return slice(k, k + 15)


def joints_slice(side):
    k = 48 + 7 * _side_index(side)
    return slice(k, k + 6)


def gripper_index(side) -> int:
    return 48 + 7 * _side_index(side) + 6


def eef_pos_slice(side):
    k = 62 + 7 * _side_index(side)
    return slice(k, k + 3)


def eef_quat_slice(side):
    k = 62 + 7 * _side_index(side) + 3
    return slice(k, k + 4)


def human_dims(side) -> np.ndarray:
    m = np.zeros(ACTION_DIM, dtype=bool)
    m[wrist_pos_slice(side)] = True
    m[wrist_sixd_slice(side)] = True
    m[fingertips_slice(side)] = True
    return m


def robot_joint_dims(side) -> np.ndarray:
    m = np.zeros(ACTION_DIM, dtype=bool)
    m[joints_slice(side)] = True
    m[gripper_index(side)] = True
    return m


def eef_dims(side) -> np.ndarray:
    m = np.zeros(ACTION_DIM, dtype=bool)
    m[eef_pos_slice(side)] = True
    m[eef_quat_slice(side)] = True
    return m


def robot_dims(side) -> np.ndarray:
    """Joint, gripper and EEF dims of one robot arm."""
    return robot_joint_dims(side) | eef_dims(side)


def block_mask(block: str, sides=SIDES) -> np.ndarray:
    """Mask for ``'human'`` or ``'robot'`` (joints + EEF) dims of the given sides."""
    fn = {"human": human_dims, "robot": robot_dims}[block]
    m = np.zeros(ACTION_DIM, dtype=bool)
    for side in sides:
        m |= fn(side)
    return m


# ---------------------------------------------------------------------------
# Typed views
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class HumanHandState:
    """Bilateral hand: wrist position + raw 6D orientation, and 5 fingertips per hand."""

    left_wrist_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    left_wrist_sixd: np.ndarray = field(default_factory=lambda: IDENTITY_SIXD.copy())
    right_wrist_pos: np.ndarray = field(default_factory=lambda: np.zeros(3))
    right_wrist_sixd: np.ndarray = field(default_factory=lambda: IDENTITY_SIXD.copy())
    left_fingertips: np.ndarray = field(default_factory=lambda: np.zeros((5, 3)))
    right_fingertips: np.ndarray = field(default_factory=lambda: np.zeros((5, 3)))

    def __post_init__(self):
        for name, shape in (("left_wrist_pos", (3,)), ("right_wrist_pos", (3,)),
                            ("left_wrist_sixd", (6,)), ("right_wrist_sixd", (6,)),
                            ("left_fingertips", (5, 3)), ("right_fingertips", (5, 3))):
            setattr(self, name, np.array(getattr(self, name), dtype=np.float64).reshape(shape))

    def wrist_pose(self, side) -> Pose:
        pos = getattr(self, f"{side}_wrist_pos")
        rot = sixd_to_matrix(getattr(self, f"{side}_wrist_sixd"))
        return Pose(pos, matrix_to_quat(rot))

    def fingertips(self, side) -> np.ndarray:
        return getattr(self, f"{side}_fingertips")

    def set_side(self, side, wrist: Pose, fingertips) -> None:
        setattr(self, f"{side}_wrist_pos", np.array(wrist.position))
        setattr(self, f"{side}_wrist_sixd", quat_to_sixd(wrist.orientation))
        setattr(self, f"{side}_fingertips", np.array(fingertips, dtype=np.float64).reshape(5, 3))

    def to_vector(self) -> np.ndarray:
        return np.concatenate([
            self.left_wrist_pos, self.left_wrist_sixd,
            self.right_wrist_pos, self.right_wrist_sixd,
            self.left_fingertips.reshape(-1), self.right_fingertips.reshape(-1),
        ])

    @classmethod
    def from_vector(cls, v) -> "HumanHandState":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (HUMAN_DIM,):
            raise BadLength(f"human state needs {HUMAN_DIM} values, got {v.shape}")
        return cls(v[0:3], v[3:9], v[9:12], v[12:18], v[18:33].reshape(5, 3), v[33:48].reshape(5, 3))


@dataclass(eq=False)
class RobotJointState:
    left_q: np.ndarray = field(default_factory=lambda: np.zeros(6))
    left_gripper: float = 1.0
    right_q: np.ndarray = field(default_factory=lambda: np.zeros(6))
    right_gripper: float = 1.0

    def __post_init__(self):
        self.left_q = np.array(self.left_q, dtype=np.float64).reshape(6)
        self.right_q = np.array(self.right_q, dtype=np.float64).reshape(6)
        self.left_gripper = float(np.clip(self.left_gripper, 0.0, 1.0))
        self.right_gripper = float(np.clip(self.right_gripper, 0.0, 1.0))

    def q(self, side) -> np.ndarray:
        return getattr(self, f"{side}_q")

    def gripper(self, side) -> float:
        return getattr(self, f"{side}_gripper")

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.left_q, [self.left_gripper], self.right_q, [self.right_gripper]])

    @classmethod
    def from_vector(cls, v) -> "RobotJointState":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (ROBOT_DIM,):
            raise BadLength(f"robot joint state needs {ROBOT_DIM} values, got {v.shape}")
        return cls(v[0:6], v[6], v[7:13], v[13])


@dataclass(eq=False)
class EefState:
    left: Pose = field(default_factory=Pose)
    right: Pose = field(default_factory=Pose)

    def pose(self, side) -> Pose:
        return getattr(self, side)

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.left.position, self.left.orientation,
                               self.right.position, self.right.orientation])

    @classmethod
    def from_vector(cls, v) -> "EefState":
        v = np.asarray(v, dtype=np.float64)
        if v.shape != (EEF_DIM,):
            raise BadLength(f"EEF state needs {EEF_DIM} values, got {v.shape}")
        return cls(Pose(v[0:3], v[3:7]), Pose(v[7:10], v[10:14]))


@dataclass(eq=False)
class UnifiedAction:
    human: HumanHandState = field(default_factory=HumanHandState)
    robot: RobotJointState = field(default_factory=RobotJointState)
    eef: EefState = field(default_factory=EefState)
    mask: np.ndarray = field(default_factory=lambda: np.ones(ACTION_DIM, dtype=bool))

    def __post_init__(self):
        self.mask = np.array(self.mask, dtype=bool).reshape(-1)
        if self.mask.shape != (ACTION_DIM,):
            raise BadLength(f"mask needs {ACTION_DIM} entries, got {self.mask.shape}")


def pack(u: UnifiedAction) -> np.ndarray:
    v = np.concatenate([u.human.to_vector(), u.robot.to_vector(), u.eef.to_vector()])
    if v.shape != (ACTION_DIM,):
        raise BadLength(f"state packed to {v.shape[0]} values instead of {ACTION_DIM}")
    return v


def unpack(v, mask=None) -> UnifiedAction:
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (ACTION_DIM,):
        raise BadLength(f"unified action needs {ACTION_DIM} values, got {v.shape}")
    if mask is None:
        mask = np.ones(ACTION_DIM, dtype=bool)
    return UnifiedAction(
        HumanHandState.from_vector(v[HUMAN]),
        RobotJointState.from_vector(v[ROBOT]),
        EefState.from_vector(v[EEF]),
        mask,
    )


def canonicalize(v) -> np.ndarray:
    """Re-impose unit quaternions and orthonormal 6D blocks on a raw 76-vector."""
    v = np.array(v, dtype=np.float64)
    for side in SIDES:
        qs = eef_quat_slice(side)
        try:
            v[qs] = quat_normalize(v[qs])
        except ValueError:
            v[qs] = IDENTITY_QUAT
        ss = wrist_sixd_slice(side)
        try:
            v[ss] = quat_to_sixd(matrix_to_quat(sixd_to_matrix(v[ss])))
        except ValueError:
            v[ss] = IDENTITY_SIXD
        g = gripper_index(side)
        v[g] = min(1.0, max(0.0, v[g]))
    return v


@dataclass(eq=False)
class ActionChunk:
    """``H`` consecutive unified actions with per-row masks and pad flags."""

    values: np.ndarray
    mask: np.ndarray
    pad: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] != ACTION_DIM or self.values.shape[0] < 1:
            raise BadLength(f"chunk must be H x {ACTION_DIM} with H >= 1, got {self.values.shape}")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim == 1:
            mask = np.broadcast_to(mask, self.values.shape).copy()
        self.mask = mask
        self.pad = np.zeros(len(self.values), dtype=bool) if self.pad is None else np.asarray(self.pad, dtype=bool)

    @property
    def horizon(self) -> int:
        return self.values.shape[0]

    @property
    def shared_mask(self) -> np.ndarray:
        return self.mask.all(axis=0)

    def rows(self) -> list[UnifiedAction]:
        return [unpack(v, m) for v, m in zip(self.values, self.mask)]


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

STD_FLOOR = 1e-6


@dataclass(eq=False)
class NormStats:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64).copy()
        self.std = np.maximum(np.asarray(self.std, dtype=np.float64), STD_FLOOR)
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.std))):
            raise ValueError("normalization statistics must be finite")

    @classmethod
    def identity(cls, dim: int = ACTION_DIM) -> "NormStats":
        return cls(np.zeros(dim), np.ones(dim))

    def normalize(self, v) -> np.ndarray:
        return (np.asarray(v, dtype=np.float64) - self.mean) / self.std

    def denormalize(self, v) -> np.ndarray:
        return np.asarray(v, dtype=np.float64) * self.std + self.mean


def normalize(v, stats: NormStats) -> np.ndarray:
    return stats.normalize(v)


def denormalize(v, stats: NormStats) -> np.ndarray:
    return stats.denormalize(v)


# ---------------------------------------------------------------------------
# Retargeting reference point
# ---------------------------------------------------------------------------

# thumb fingertip -> thumb knuckle proxy, expressed in the wrist frame
DEFAULT_THUMB_OFFSET = (0.0, 0.0, -0.03)


def thumb_reference(h: HumanHandState, side: str, offset=DEFAULT_THUMB_OFFSET) -> Pose:
    """Thumb knuckle proxy: thumb fingertip plus a wrist-frame offset, wrist orientation."""
    wrist = h.wrist_pose(side)
    tip = h.fingertips(side)[0]
    return Pose(tip + wrist.rotation @ np.asarray(offset, dtype=np.float64), wrist.orientation)
