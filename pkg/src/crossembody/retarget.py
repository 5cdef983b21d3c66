"""Human <-> robot action mapping.

Human to robot: the thumb reference displacement since step 0 is rotated
into the robot frame and added to the initial EEF pose, then solved for
joints by warm-started IK. Robot to human: the EEF pose mapped into the
human frame becomes the thumb reference, and the other fingertips and the
wrist are placed around it from fixed hand proportions and the gripper.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .actionspace import (
    DEFAULT_THUMB_OFFSET,
    SIDES,
    EefState,
    HumanHandState,
    RobotJointState,
    thumb_reference,
)
from .errors import ConfigError, EmptyTrajectory
from .geometry import FrameTransform, Pose, apply_transform, matrix_to_quat
from .kinematics import IkParams, KinematicChain, forward_kinematics, resolve_chain, solve_ik_or_best

FINGER_NAMES = ("index", "middle", "ring", "pinky")

# human frame: x right, y up, z towards the viewer; robot frame: x forward, y left, z up
DEFAULT_HUMAN_TO_ROBOT = np.array([[0.0, 0.0, -1.0], [-1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])


@dataclass(frozen=True, eq=False)
class FingerParams:
    """Thumb-tip to fingertip spans (m) and their gripper-dependent scaling.

    Directions are unit vectors in the thumb frame for the right hand; the
    left hand uses their mirror image across ``sagittal_axis``.
    """

    base_lengths: tuple = (0.08, 0.085, 0.08, 0.065)
    directions: tuple = (
        (0.80, -0.60, 0.0),
        (0.90, -0.40, 0.15),
        (0.95, -0.20, 0.25),
        (0.97, 0.0, 0.25),
    )
    # (closed, open) extension factors: index pairs with the thumb, the rest are synergistic
    dominant_factors: tuple = (0.6, 1.0)
    synergistic_factors: tuple = (0.8, 1.0)
    sagittal_axis: int = 1

    def __post_init__(self):
        lengths = tuple(float(v) for v in self.base_lengths)
        if len(lengths) != 4 or min(lengths) <= 0.0:
            raise ConfigError("finger_params.base_lengths needs 4 positive lengths (index..pinky)")
        dirs = np.array(self.directions, dtype=np.float64).reshape(4, 3)
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        object.__setattr__(self, "base_lengths", lengths)
        object.__setattr__(self, "directions", tuple(map(tuple, dirs)))

    def factor(self, finger: int, gripper: float) -> float:
        """Extension factor alpha(g) for finger ``finger`` (0 = index)."""
        closed, open_ = self.dominant_factors if finger == 0 else self.synergistic_factors
        return closed + (open_ - closed) * gripper

    def mirror(self, side) -> np.ndarray:
        m = np.ones(3)
        if side == "left":
            m[self.sagittal_axis] = -1.0
        return m

    def offsets(self, gripper: float, side: str) -> np.ndarray:
        """Thumb-frame displacement of each non-thumb fingertip from the thumb tip."""
        dirs = np.asarray(self.directions) * self.mirror(side)
        scale = np.array([self.base_lengths[i] * self.factor(i, gripper) for i in range(4)])
        return dirs * scale[:, None]


@dataclass(frozen=True, eq=False)
class RetargetConfig:
    r_h: FrameTransform = field(default_factory=lambda: FrameTransform(DEFAULT_HUMAN_TO_ROBOT))
    r_m: FrameTransform = field(default_factory=lambda: FrameTransform(DEFAULT_HUMAN_TO_ROBOT.T))
    chains: dict = field(default_factory=dict)
    initial_eef: EefState | None = None
    finger_params: FingerParams = field(default_factory=FingerParams)
    gripper_calibration: tuple = (0.048, 0.08)
    thumb_offset: tuple = DEFAULT_THUMB_OFFSET
    wrist_offset: tuple = (-0.07, -0.02, 0.02)
    ik: IkParams = field(default_factory=IkParams)

    def __post_init__(self):
        lo, hi = (float(v) for v in self.gripper_calibration)
        if not lo < hi:
            raise ConfigError("gripper_calibration needs min_dist < max_dist")
        object.__setattr__(self, "gripper_calibration", (lo, hi))
        chains = dict(self.chains)
        for side, y in (("left", 0.25), ("right", -0.25)):
            if side not in chains:
                chains[side] = resolve_chain("arm_a").with_base(Pose((0.0, y, 0.0)))
            else:
                chains[side] = resolve_chain(chains[side])
        object.__setattr__(self, "chains", chains)
        if self.initial_eef is None:
            eef = EefState(*(forward_kinematics(chains[s], chains[s].home) for s in SIDES))
            object.__setattr__(self, "initial_eef", eef)

    def home_q(self, side) -> np.ndarray:
        return self.chains[side].home

    def wrist_offset_for(self, side) -> np.ndarray:
        return np.asarray(self.wrist_offset, dtype=np.float64) * self.finger_params.mirror(side)

    def home_robot_state(self) -> RobotJointState:
        return RobotJointState(self.home_q("left"), 1.0, self.home_q("right"), 1.0)


@dataclass
class RetargetReport:
    """Per-step, per-side IK outcome of a human-to-robot conversion."""

    steps: list = field(default_factory=list)
    sides: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    pos_residual: list = field(default_factory=list)
    rot_residual: list = field(default_factory=list)
    gripper: list = field(default_factory=list)

    def add(self, step, side, converged, pos_res, rot_res, gripper):
        self.steps.append(step)
        self.sides.append(side)
        self.converged.append(bool(converged))
        self.pos_residual.append(float(pos_res))
        self.rot_residual.append(float(rot_res))
        self.gripper.append(float(gripper))

    def __len__(self):
        return len(self.steps)

    def failures(self) -> list[tuple[int, str]]:
        return [(s, side) for s, side, ok in zip(self.steps, self.sides, self.converged) if not ok]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "side", "converged", "pos_residual", "rot_residual", "gripper"])
        for row in zip(self.steps, self.sides, self.converged, self.pos_residual, self.rot_residual, self.gripper):
            s, side, ok, p, r, g = row
            w.writerow([s, side, int(ok), repr(p), repr(r), repr(g)])
        return buf.getvalue()


def _check_nonempty(traj):
    if len(traj) == 0:
        raise EmptyTrajectory("trajectory has no steps")


# ---------------------------------------------------------------------------
# Human -> robot
# ---------------------------------------------------------------------------


def human_to_robot_eef(traj: Sequence[HumanHandState], cfg: RetargetConfig, sides=SIDES) -> list[EefState]:
    """Target EEF poses from relative thumb-reference motion.

    Positions: ``eef_0 + L_h (ref_t - ref_0)``. Orientations:
    ``eef_0 * (R_h W_0)^-1 * (R_h W_t)`` with ``W`` the wrist orientation.
    Sides not listed in ``sides`` stay at the initial EEF pose.
    """
    _check_nonempty(traj)
    rot_h = cfg.r_h.rotation
    per_side = {}
    for side in SIDES:
        eef0 = cfg.initial_eef.pose(side)
        if side not in sides:
            per_side[side] = [eef0] * len(traj)
            continue
        refs = [thumb_reference(h, side, cfg.thumb_offset) for h in traj]
        ref0 = refs[0]
        w0_inv = (rot_h @ ref0.rotation).T
        base_rot = eef0.rotation @ w0_inv
        poses = [eef0]
        for ref in refs[1:]:
            pos = eef0.position + cfg.r_h.apply_vector(ref.position - ref0.position)
            rot = base_rot @ (rot_h @ ref.rotation)
            poses.append(Pose(pos, matrix_to_quat(rot)))
        per_side[side] = poses
    return [EefState(l, r) for l, r in zip(per_side["left"], per_side["right"])]


def estimate_gripper(h: HumanHandState, side: str, cfg: RetargetConfig) -> float:
    """Thumb-index fingertip distance mapped linearly onto [0, 1]."""
    tips = h.fingertips(side)
    d = float(np.linalg.norm(tips[1] - tips[0]))
    lo, hi = cfg.gripper_calibration
    return float(min(1.0, max(0.0, (d - lo) / (hi - lo))))


def human_to_robot_joints(eef_traj: Sequence[EefState], human_traj: Sequence[HumanHandState],
                          cfg: RetargetConfig, sides=SIDES, seeds=None):
    """Warm-started IK per arm plus gripper estimation.

    A step whose IK fails holds the last converged joints and is flagged in
    the report; the trajectory is never aborted.

    Returns:
        (list of RobotJointState, RetargetReport)
    """
    _check_nonempty(eef_traj)
    if len(eef_traj) != len(human_traj):
        raise ValueError("EEF and human trajectories differ in length")
    report = RetargetReport()
    joints = {s: [] for s in SIDES}
    grippers = {s: [] for s in SIDES}
    for side in SIDES:
        chain = cfg.chains[side]
        prev = chain.home if seeds is None else chain.clamp(seeds[side])
        for t, (eef, h) in enumerate(zip(eef_traj, human_traj)):
            if side not in sides:
                joints[side].append(chain.home)
                grippers[side].append(1.0)
                continue
            g = estimate_gripper(h, side, cfg)
            sol = solve_ik_or_best(chain, eef.pose(side), prev, cfg.ik)
            if sol.converged:
                prev = sol.q
            joints[side].append(prev)
            grippers[side].append(g)
            report.add(t, side, sol.converged, sol.position_error, sol.orientation_error, g)
    states = [
        RobotJointState(joints["left"][t], grippers["left"][t], joints["right"][t], grippers["right"][t])
        for t in range(len(eef_traj))
    ]
    return states, report


def human_to_robot(traj: Sequence[HumanHandState], cfg: RetargetConfig, sides=SIDES):
    """Full human -> EEF -> joints conversion. Returns (eef_traj, joint_traj, report)."""
    eef = human_to_robot_eef(traj, cfg, sides)
    joints, report = human_to_robot_joints(eef, traj, cfg, sides)
    return eef, joints, report


# ---------------------------------------------------------------------------
# Robot -> human
# ---------------------------------------------------------------------------


def robot_to_human_thumb(eef_traj: Sequence[EefState], cfg: RetargetConfig) -> list[tuple[Pose, Pose]]:
    """Thumb reference poses (left, right): the EEF poses mapped into the human frame."""
    _check_nonempty(eef_traj)
    return [(apply_transform(cfg.r_m, e.left), apply_transform(cfg.r_m, e.right)) for e in eef_traj]


def synthesize_fingers(thumb: Pose, gripper: float, side: str, cfg: RetargetConfig):
    """Place the five fingertips and the wrist around a thumb reference pose.

    The thumb tip sits at the inverse of the thumb-reference offset, so
    :func:`thumb_reference` recovers ``thumb`` exactly. The other tips are
    ``thumb_tip + R (direction * base_length * alpha(gripper))``.

    Returns:
        (fingertips (5, 3), wrist Pose)
    """
    gripper = float(min(1.0, max(0.0, gripper)))
    rot = thumb.rotation
    tips = np.empty((5, 3))
    tips[0] = thumb.position - rot @ np.asarray(cfg.thumb_offset, dtype=np.float64)
    tips[1:] = tips[0] + cfg.finger_params.offsets(gripper, side) @ rot.T
    wrist = Pose(thumb.position + rot @ cfg.wrist_offset_for(side), thumb.orientation)
    return tips, wrist


def robot_to_human(traj, cfg: RetargetConfig, grippers=None) -> list[HumanHandState]:
    """Synthesize full 48-dim hand states from robot joints or EEF poses.

    ``traj`` holds RobotJointState (passed through FK, grippers taken from
    the state) or EefState (grippers from ``grippers`` as a sequence of
    ``(left, right)`` pairs, default fully open).
    """
    _check_nonempty(traj)
    if isinstance(traj[0], RobotJointState):
        eef_traj = [EefState(*(forward_kinematics(cfg.chains[s], r.q(s)) for s in SIDES)) for r in traj]
        grippers = [(r.left_gripper, r.right_gripper) for r in traj]
    else:
        eef_traj = list(traj)
        if grippers is None:
            grippers = [(1.0, 1.0)] * len(eef_traj)
    thumbs = robot_to_human_thumb(eef_traj, cfg)
    out = []
    for (left, right), g in zip(thumbs, grippers):
        h = HumanHandState()
        for side, thumb, gs in (("left", left, g[0]), ("right", right, g[1])):
            tips, wrist = synthesize_fingers(thumb, gs, side, cfg)
            h.set_side(side, wrist, tips)
        out.append(h)
    return out


# ---------------------------------------------------------------------------
# Config (de)serialization
# ---------------------------------------------------------------------------


def _transform_from(value, default: FrameTransform) -> FrameTransform:
    if value is None:
        return default
    if isinstance(value, dict):
        return FrameTransform.from_array(value["values"], bool(value.get("orthogonal", True)))
    return FrameTransform.from_array(value)


def retarget_config_from_dict(d: dict | None) -> RetargetConfig:
    d = dict(d or {})
    known = {"r_h", "r_m", "r_m_inverse_of_r_h", "chains", "finger_params", "gripper_calibration",
             "thumb_offset", "wrist_offset", "ik", "initial_eef"}
    unknown = set(d) - known
    if unknown:
        raise ConfigError(f"unknown retarget field(s): {', '.join(sorted('retarget.' + k for k in unknown))}")
    r_h = _transform_from(d.get("r_h"), FrameTransform(DEFAULT_HUMAN_TO_ROBOT))
    if d.get("r_m") is None or d.get("r_m_inverse_of_r_h"):
        r_m = r_h.inverse()
    else:
        r_m = _transform_from(d.get("r_m"), r_h.inverse())
    chains = {}
    for side, spec in (d.get("chains") or {}).items():
        if side not in SIDES:
            raise ConfigError(f"retarget.chains.{side}: side must be left or right")
        if isinstance(spec, dict) and "preset" in spec:
            chain = resolve_chain(spec["preset"])
            if "base" in spec:
                b = spec["base"]
                chain = chain.with_base(Pose(b.get("position", (0, 0, 0)), b.get("orientation", (1, 0, 0, 0))))
            if "home" in spec:
                chain = replace(chain, home=np.asarray(spec["home"], dtype=np.float64))
            chains[side] = chain
        else:
            chains[side] = resolve_chain(spec)
    kwargs = {}
    if "finger_params" in d:
        kwargs["finger_params"] = FingerParams(**{k: tuple(v) if isinstance(v, list) else v
                                                  for k, v in d["finger_params"].items()})
    for key in ("gripper_calibration", "thumb_offset", "wrist_offset"):
        if key in d:
            kwargs[key] = tuple(d[key])
    if "ik" in d:
        kwargs["ik"] = IkParams(**d["ik"])
    if "initial_eef" in d:
        e = d["initial_eef"]
        kwargs["initial_eef"] = EefState(Pose(*e["left"]), Pose(*e["right"]))
    return RetargetConfig(r_h=r_h, r_m=r_m, chains=chains, **kwargs)
