"""Demonstration records and desk-scale synthetic reach demonstrations."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..actionspace import (
    ACTION_DIM,
    EEF,
    HUMAN,
    ROBOT,
    SIDES,
    EefState,
    RobotJointState,
    block_mask,
    gripper_index,
    joints_slice,
)
from ..errors import ConfigError, TaskUnreachable
from ..geometry import Pose, quat_mul, rotvec_to_quat
from ..kinematics import IkParams, forward_kinematics, solve_trajectory
from ..retarget import RetargetConfig, robot_to_human

EMBODIMENTS = ("robot", "human")


@dataclass(eq=False)
class Demonstration:
    """One demonstration: per-step proprioception and next-step action labels.

    ``proprio[t]`` is the state at step ``t`` and ``labels[t]`` the state at
    ``t + 1``; both are unified 76-vectors with boolean masks of the same shape.
    """

    id: str
    embodiment: str
    instruction_id: int
    scene: np.ndarray
    proprio: np.ndarray
    proprio_mask: np.ndarray
    labels: np.ndarray
    label_mask: np.ndarray
    augmented: bool = False

    def __post_init__(self):
        if self.embodiment not in EMBODIMENTS:
            raise ValueError(f"embodiment must be one of {EMBODIMENTS}, got {self.embodiment!r}")
        self.scene = np.asarray(self.scene, dtype=np.float64).reshape(-1)
        self.proprio = np.asarray(self.proprio, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.proprio_mask = np.asarray(self.proprio_mask, dtype=bool)
        self.label_mask = np.asarray(self.label_mask, dtype=bool)
        n = len(self.labels)
        for name in ("proprio", "labels", "proprio_mask", "label_mask"):
            if getattr(self, name).shape != (n, ACTION_DIM):
                raise ValueError(f"{name} must have shape ({n}, {ACTION_DIM})")
        self.instruction_id = int(self.instruction_id)

    def __len__(self):
        return len(self.labels)

    @property
    def native_mask(self) -> np.ndarray:
        return self.proprio_mask[0]

    def active_sides(self) -> tuple:
        block = "robot" if self.embodiment == "robot" else "human"
        return tuple(s for s in SIDES if (self.proprio_mask[0] & block_mask(block, (s,))).any())

    def states(self) -> np.ndarray:
        """State sequence ``x_0 .. x_T`` (proprio at 0 followed by all labels)."""
        return np.concatenate([self.proprio[:1], self.labels], axis=0)

    def copy(self) -> "Demonstration":
        return Demonstration(self.id, self.embodiment, self.instruction_id, self.scene.copy(),
                             self.proprio.copy(), self.proprio_mask.copy(), self.labels.copy(),
                             self.label_mask.copy(), self.augmented)

    def equals(self, other: "Demonstration") -> bool:
        """Bit-exact structural equality."""
        return (
            self.id == other.id and self.embodiment == other.embodiment
            and self.instruction_id == other.instruction_id and self.augmented == other.augmented
            and all(np.array_equal(getattr(self, k), getattr(other, k))
                    for k in ("scene", "proprio", "proprio_mask", "labels", "label_mask"))
        )


def demo_from_states(id_, embodiment, instruction_id, scene, states, mask) -> Demonstration:
    states = np.asarray(states, dtype=np.float64)
    mask = np.broadcast_to(np.asarray(mask, dtype=bool), (len(states) - 1, ACTION_DIM)).copy()
    return Demonstration(id_, embodiment, instruction_id, scene, states[:-1], mask.copy(), states[1:], mask)


# ---------------------------------------------------------------------------
# Synthetic reach task
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReachTaskConfig:
    """Move one arm's EEF from its home pose to a sampled goal pose and hold.

    ``target_low``/``target_high`` bound the target box, given relative to
    the arm's home EEF position in the robot world frame. The goal
    orientation is the home orientation tilted by up to ``max_tilt`` rad
    about a random world axis.
    """

    name: str = "reach_right"
    instruction_id: int = 0
    side: str = "right"
    target_low: tuple = (-0.05, -0.15, -0.05)
    target_high: tuple = (0.15, 0.15, 0.15)
    move_steps: int = 30
    hold_steps: int = 10
    human_gripper_range: tuple = (0.6, 1.0)
    human_arc: float = 0.02
    max_tilt: float = 0.2
    ik: IkParams = field(default_factory=lambda: IkParams(pos_tol=1e-9, rot_tol=1e-9, min_damping=1e-5))

    def __post_init__(self):
        if self.side not in SIDES:
            raise ConfigError(f"task {self.name}: side must be left or right")
        if self.move_steps < 1 or self.hold_steps < 0:
            raise ConfigError(f"task {self.name}: move_steps >= 1 and hold_steps >= 0 required")
        if any(lo > hi for lo, hi in zip(self.target_low, self.target_high)):
            raise ConfigError(f"task {self.name}: target_low must not exceed target_high")

    @property
    def length(self) -> int:
        return self.move_steps + self.hold_steps

    def sample_goal(self, cfg: RetargetConfig, rng: np.random.Generator) -> np.ndarray:
        """Goal as ``[position (3), world tilt rotation vector (3)]``."""
        home = cfg.initial_eef.pose(self.side).position
        position = home + rng.uniform(self.target_low, self.target_high)
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        angle = rng.uniform(0.0, self.max_tilt)
        return np.concatenate([position, angle * axis])


def min_jerk(n_steps: int) -> np.ndarray:
    """Minimum-jerk phase ``10 s^3 - 15 s^4 + 6 s^5`` at ``n_steps + 1`` samples."""
    s = np.linspace(0.0, 1.0, n_steps + 1)
    return s ** 3 * (10.0 - 15.0 * s + 6.0 * s * s)


def _phase(task: ReachTaskConfig) -> np.ndarray:
    return np.concatenate([min_jerk(task.move_steps), np.ones(task.hold_steps)])


def reach_path(task: ReachTaskConfig, start: np.ndarray, target: np.ndarray, arc: float = 0.0) -> np.ndarray:
    """EEF positions for a reach (``length + 1`` points), optionally bowed sideways."""
    phase = _phase(task)
    delta = target - start
    path = start + phase[:, None] * delta
    if arc:
        lateral = np.cross([0.0, 0.0, 1.0], delta)
        n = np.linalg.norm(lateral)
        if n > 1e-12:
            path = path + arc * np.sin(math.pi * phase)[:, None] * (lateral / n)
    return path


def reach_poses(task: ReachTaskConfig, start: Pose, goal, arc: float = 0.0) -> list[Pose]:
    """EEF poses for a reach: positions from :func:`reach_path`, tilt growing with the same phase."""
    goal = np.asarray(goal, dtype=np.float64)
    path = reach_path(task, start.position, goal[:3], arc)
    tilt = goal[3:6]
    return [Pose(p, quat_mul(rotvec_to_quat(s * tilt), start.orientation)) for p, s in zip(path, _phase(task))]


def goal_pose(task: ReachTaskConfig, cfg: RetargetConfig, goal) -> Pose:
    goal = np.asarray(goal, dtype=np.float64)
    start = cfg.initial_eef.pose(task.side)
    return Pose(goal[:3], quat_mul(rotvec_to_quat(goal[3:6]), start.orientation))


def _robot_state_vector(cfg: RetargetConfig, q_by_side: dict, grip_by_side: dict) -> np.ndarray:
    v = np.zeros(ACTION_DIM)
    robot = RobotJointState(q_by_side["left"], grip_by_side["left"], q_by_side["right"], grip_by_side["right"])
    eef = EefState(*(forward_kinematics(cfg.chains[s], q_by_side[s]) for s in SIDES))
    v[ROBOT] = robot.to_vector()
    v[EEF] = eef.to_vector()
    return v


def _demo_rng(seed: int, embodiment: str, index: int, instruction_id: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), EMBODIMENTS.index(embodiment), int(instruction_id), int(index)])


def make_robot_demo(task: ReachTaskConfig, cfg: RetargetConfig, goal: np.ndarray, id_: str) -> Demonstration:
    side = task.side
    chain = cfg.chains[side]
    center, radius = chain.reach_sphere()
    if np.linalg.norm(np.asarray(goal)[:3] - center) > radius + task.ik.pos_tol:
        raise TaskUnreachable(f"task {task.name}: goal {np.array2string(np.asarray(goal), precision=3)} "
                              f"lies outside the arm's reach")
    poses = reach_poses(task, cfg.initial_eef.pose(side), goal)
    sols = solve_trajectory(chain, poses, chain.home, task.ik)
    bad = [k for k, s in enumerate(sols) if not s.converged]
    if bad:
        raise TaskUnreachable(
            f"task {task.name}: goal {np.array2string(np.asarray(goal), precision=3)} not reachable "
            f"(IK failed at {len(bad)} of {len(poses)} waypoints)"
        )
    other = "left" if side == "right" else "right"
    states = np.stack([
        _robot_state_vector(cfg, {side: s.q, other: cfg.home_q(other)}, {"left": 1.0, "right": 1.0})
        for s in sols
    ])
    mask = block_mask("robot", (side,))
    return demo_from_states(id_, "robot", task.instruction_id, goal, states, mask)


def make_human_demo(task: ReachTaskConfig, cfg: RetargetConfig, goal: np.ndarray, gripper: float,
                    arc: float, id_: str) -> Demonstration:
    side = task.side
    other = "left" if side == "right" else "right"
    eefs = []
    for pose in reach_poses(task, cfg.initial_eef.pose(side), goal, arc):
        poses = {side: pose, other: cfg.initial_eef.pose(other)}
        eefs.append(EefState(poses["left"], poses["right"]))
    grips = {side: gripper, other: 1.0}
    hands = robot_to_human(eefs, cfg, grippers=[(grips["left"], grips["right"])] * len(eefs))
    states = np.zeros((len(hands), ACTION_DIM))
    for k, h in enumerate(hands):
        states[k, HUMAN] = h.to_vector()
    mask = block_mask("human", (side,))
    return demo_from_states(id_, "human", task.instruction_id, goal, states, mask)


def generate_synthetic_demos(task: ReachTaskConfig, n: int, seed: int, cfg: RetargetConfig,
                             embodiments=EMBODIMENTS, check_reachable: bool = True) -> list[Demonstration]:
    """Scripted minimum-jerk reach demonstrations, ``n`` per embodiment.

    Robot demos are executed through IK; human demos drive a synthetic hand
    (from the finger synthesizer) along the same kind of path with a random
    aperture and a slight sideways bow. Each demo draws from its own
    generator keyed on ``(seed, embodiment, task, index)``.

    Raises:
        TaskUnreachable: a sampled target cannot be reached by the arm.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    demos = []
    for emb in embodiments:
        for i in range(n):
            rng = _demo_rng(seed, emb, i, task.instruction_id)
            goal = task.sample_goal(cfg, rng)
            id_ = f"{task.name}-{emb}-{i:05d}"
            if emb == "robot":
                demos.append(make_robot_demo(task, cfg, goal, id_))
            else:
                if check_reachable:
                    # the robot must be able to follow the human demo after retargeting
                    make_robot_demo(task, cfg, goal, id_)
                g = rng.uniform(*task.human_gripper_range)
                arc = rng.uniform(-task.human_arc, task.human_arc)
                demos.append(make_human_demo(task, cfg, goal, g, arc, id_))
    return demos


def robot_state_from_vector(v) -> dict:
    """Joint vectors and grippers per side from a packed 76-vector."""
    v = np.asarray(v)
    return {s: (v[joints_slice(s)], float(v[gripper_index(s)])) for s in SIDES}
