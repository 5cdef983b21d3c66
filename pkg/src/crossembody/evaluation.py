"""Closed-loop rollouts in a pure-kinematic reach environment.

Each control cycle samples a chunk for every live rollout, executes the
first ``k`` rows' joint targets (clamped to limits) through forward
kinematics, and rebuilds the observation. A rollout succeeds when the final
EEF position lies within ``success_tol`` of the goal.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .actionspace import (
    ACTION_DIM,
    EEF,
    ROBOT,
    EefState,
    RobotJointState,
    block_mask,
    eef_pos_slice,
    eef_quat_slice,
    gripper_index,
    joints_slice,
)
from .dataset.demos import ReachTaskConfig, make_robot_demo
from .errors import TaskUnreachable
from .geometry import Pose
from .kinematics import IkParams, forward_kinematics, pose_residual, solve_ik_or_best
from .policy.data import PolicyData
from .policy.losses import HUMAN_BLOCK, ROBOT_SOURCE
from .policy.sampling import Observation, Policy, sample_batch, sample_normalized
from .retarget import RetargetConfig


@dataclass(frozen=True)
class EvalConfig:
    rollouts: int = 50
    seed: int = 1000
    flow_steps: int = 10
    execute_rows: int = 0
    extra_steps: int = 8
    success_tol: float = 0.03
    ik: IkParams = field(default_factory=IkParams)

    def rows_for(self, horizon: int) -> int:
        return self.execute_rows if self.execute_rows > 0 else max(1, horizon // 4)


@dataclass
class TaskResult:
    task: str
    successes: list
    final_errors: list
    trajectories: list

    @property
    def success_rate(self) -> float:
        return float(np.mean(self.successes)) if self.successes else 0.0

    @property
    def mean_final_error(self) -> float:
        return float(np.mean(self.final_errors)) if self.final_errors else float("nan")


@dataclass
class EvalReport:
    tasks: list
    chunk_mse: float = float("nan")
    ik_pos_residual_mean: float = float("nan")
    ik_pos_residual_max: float = float("nan")
    ik_converged_fraction: float = float("nan")

    def rows(self) -> list[dict]:
        out = []
        for r in self.tasks:
            out.append({
                "task": r.task,
                "rollouts": len(r.successes),
                "success_rate": r.success_rate,
                "mean_final_error_m": r.mean_final_error,
                "chunk_mse": self.chunk_mse,
                "ik_pos_residual_mean": self.ik_pos_residual_mean,
                "ik_pos_residual_max": self.ik_pos_residual_max,
                "ik_converged_fraction": self.ik_converged_fraction,
            })
        return out

    def to_csv(self) -> str:
        rows = self.rows()
        buf = io.StringIO()
        cols = list(rows[0]) if rows else ["task"]
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            w.writerow([r[c] if isinstance(r[c], (str, int)) else repr(float(r[c])) for c in cols])
        return buf.getvalue()

    def to_table(self) -> str:
        lines = [f"{'task':<16}{'n':>5}{'success':>10}{'final_err_m':>13}"]
        for r in self.tasks:
            lines.append(f"{r.task:<16}{len(r.successes):>5}{r.success_rate:>10.3f}{r.mean_final_error:>13.4f}")
        lines.append(f"chunk_mse            {self.chunk_mse:.6g}")
        lines.append(f"ik_residual_mean_m   {self.ik_pos_residual_mean:.6g}")
        lines.append(f"ik_residual_max_m    {self.ik_pos_residual_max:.6g}")
        lines.append(f"ik_converged         {self.ik_converged_fraction:.3f}")
        return "\n".join(lines) + "\n"


def eval_goals(task: ReachTaskConfig, cfg: RetargetConfig, n: int, seed: int) -> list[np.ndarray]:
    """``n`` reachable goals drawn with generators keyed on ``(seed, task, i)``."""
    out = []
    i = 0
    while len(out) < n:
        if i >= 100 * max(n, 1):
            raise TaskUnreachable(f"task {task.name}: could not find {n} reachable evaluation goals")
        rng = np.random.default_rng([int(seed), int(task.instruction_id), i])
        goal = task.sample_goal(cfg, rng)
        i += 1
        try:
            make_robot_demo(task, cfg, goal, "probe")
        except TaskUnreachable:
            continue
        out.append(goal)
    return out


def robot_state(cfg: RetargetConfig, q: dict, grip: dict) -> np.ndarray:
    v = np.zeros(ACTION_DIM)
    v[ROBOT] = RobotJointState(q["left"], grip["left"], q["right"], grip["right"]).to_vector()
    v[EEF] = EefState(*(forward_kinematics(cfg.chains[s], q[s]) for s in ("left", "right"))).to_vector()
    return v


class ChunkSource:
    """Interface: ``__call__(observations, times) -> (B, H, 76)`` raw chunks."""

    horizon: int


class PolicySource(ChunkSource):
    def __init__(self, policy: Policy, flow_steps: int, seed: int):
        self.policy = policy
        self.flow_steps = flow_steps
        self.seed = seed
        self.horizon = policy.horizon
        self.calls = 0

    def __call__(self, observations, times):
        chunk = sample_batch(self.policy, observations, self.flow_steps, seed=[self.seed, self.calls])
        self.calls += 1
        return chunk


class OracleSource(ChunkSource):
    """Replays the scripted robot demonstration for each goal."""

    def __init__(self, task: ReachTaskConfig, cfg: RetargetConfig, goals, horizon: int):
        self.horizon = horizon
        self.labels = [make_robot_demo(task, cfg, g, "oracle").labels for g in goals]

    def __call__(self, observations, times):
        out = []
        for k, t in enumerate(times):
            labels = self.labels[k]
            rows = np.minimum(np.arange(t, t + self.horizon), len(labels) - 1)
            out.append(labels[rows])
        return np.stack(out)


def rollout_task(source: ChunkSource, task: ReachTaskConfig, cfg: RetargetConfig, goals,
                 ecfg: EvalConfig, ik_log: list | None = None) -> TaskResult:
    """Roll out one episode per goal in lockstep; success is judged on position."""
    side = task.side
    chain = cfg.chains[side]
    n = len(goals)
    k_rows = ecfg.rows_for(source.horizon)
    total = task.length + ecfg.extra_steps
    q = [{s: cfg.home_q(s).copy() for s in ("left", "right")} for _ in range(n)]
    grip = [{"left": 1.0, "right": 1.0} for _ in range(n)]
    states = [robot_state(cfg, q[i], grip[i]) for i in range(n)]
    pmask = block_mask("robot", (side,))
    traj = [[states[i][eef_pos_slice(side)].copy()] for i in range(n)]
    t = 0
    while t < total:
        obs = [Observation(task.instruction_id, goals[i], states[i], pmask) for i in range(n)]
        chunks = source(obs, [t] * n)
        rows = min(k_rows, total - t)
        for i in range(n):
            for r in range(rows):
                row = chunks[i, r]
                if ik_log is not None:
                    goal = Pose(row[eef_pos_slice(side)], row[eef_quat_slice(side)])
                    sol = solve_ik_or_best(chain, goal, q[i][side], ecfg.ik)
                    ik_log.append((sol.converged, pose_residual(chain, sol.q, goal)[0]))
                q[i][side] = chain.clamp(row[joints_slice(side)])
                grip[i][side] = float(np.clip(row[gripper_index(side)], 0.0, 1.0))
                states[i] = robot_state(cfg, q[i], grip[i])
                traj[i].append(states[i][eef_pos_slice(side)].copy())
        t += rows
    errors = [float(np.linalg.norm(states[i][eef_pos_slice(side)] - goals[i][:3])) for i in range(n)]
    return TaskResult(task.name, [e < ecfg.success_tol for e in errors], errors, [np.array(p) for p in traj])


def masked_mse(pred: np.ndarray, target: np.ndarray, mask: np.ndarray) -> float:
    mask = np.asarray(mask, dtype=bool)
    count = int(mask.sum())
    if count == 0:
        return float("nan")
    return float(np.sum(np.where(mask, (pred - target) ** 2, 0.0))) / count


def heldout_mse(params, data: PolicyData, flow_steps: int = 10, seed: int = 0, dims=None,
                source: int | None = None, batch_size: int = 256) -> float:
    """Masked MSE in normalized units between sampled and held-out chunks.

    Args:
        dims: optional boolean 76-mask restricting the compared dims.
        source: restrict to robot (0) or human (1) sourced samples.
    """
    idx = np.arange(len(data))
    if source is not None:
        idx = data.robot_samples if source == ROBOT_SOURCE else data.human_samples
    sq = 0.0
    count = 0
    for start in range(0, len(idx), batch_size):
        part = idx[start:start + batch_size]
        batch = data.batch(part)
        rng = np.random.default_rng([seed, start])
        pred = sample_normalized(params, batch, flow_steps, rng)
        mask = batch["target_mask"]
        if dims is not None:
            mask = mask & np.asarray(dims, dtype=bool)
        sq += float(np.sum(np.where(mask, (pred - batch["target"]) ** 2, 0.0)))
        count += int(mask.sum())
    return sq / count if count else float("nan")


def cross_embodiment_error(params, data: PolicyData, flow_steps: int = 10, seed: int = 0) -> float:
    """Human-dim error on robot-sourced samples (retargeted labels the robot never showed)."""
    return heldout_mse(params, data, flow_steps, seed, dims=HUMAN_BLOCK, source=ROBOT_SOURCE)


def evaluate(source_factory, tasks, cfg: RetargetConfig, ecfg: EvalConfig, heldout: PolicyData | None = None,
             params=None, with_ik: bool = True) -> EvalReport:
    """Run ``ecfg.rollouts`` rollouts per task and summarize them.

    Args:
        source_factory: ``f(task, goals) -> ChunkSource``.
    """
    results = []
    ik_log: list = []
    for task in tasks:
        goals = eval_goals(task, cfg, ecfg.rollouts, ecfg.seed)
        source = source_factory(task, goals)
        results.append(rollout_task(source, task, cfg, goals, ecfg, ik_log if with_ik else None))
    report = EvalReport(results)
    if heldout is not None and params is not None:
        report.chunk_mse = heldout_mse(params, heldout, ecfg.flow_steps, ecfg.seed)
    if ik_log:
        res = np.array([r for _, r in ik_log])
        report.ik_pos_residual_mean = float(res.mean())
        report.ik_pos_residual_max = float(res.max())
        report.ik_converged_fraction = float(np.mean([ok for ok, _ in ik_log]))
    return report
