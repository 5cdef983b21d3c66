"""End-to-end steps shared by the command line and the tests."""

from __future__ import annotations

import csv
import io

import numpy as np

from .actionspace import EEF, HUMAN, ROBOT, HumanHandState, RobotJointState, human_dims, robot_dims
from .config import ExperimentConfig
from .dataset import (
    Demonstration,
    augment_with_report,
    compute_norm_stats,
    generate_synthetic_demos,
)
from .dataset.demos import demo_from_states
from .errors import CrossEmbodyError, EmptyTrajectory
from .policy.data import PolicyData
from .policy.model import init_params
from .policy.sampling import Policy
from .policy.train import TrainState, train
from .retarget import RetargetConfig, human_to_robot, robot_to_human

HELDOUT_SEED_OFFSET = 7919


class WrongEmbodiment(CrossEmbodyError, ValueError):
    pass


def report_rows_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["demo", "step", "side", "converged", "pos_residual", "rot_residual", "gripper"])
    for demo_id, rep in rows:
        for s, side, ok, p, r, g in zip(rep.steps, rep.sides, rep.converged, rep.pos_residual,
                                        rep.rot_residual, rep.gripper):
            w.writerow([demo_id, s, side, int(ok), repr(float(p)), repr(float(r)), repr(float(g))])
    return buf.getvalue()


def retarget_demo(d: Demonstration, cfg: RetargetConfig, direction: str):
    """Convert a demo to the other embodiment; returns ``(demo, report_or_None)``.

    ``r2h`` turns a robot demo into a human demo through the finger
    synthesizer; ``h2r`` turns a human demo into a robot demo through EEF
    mapping and IK. Only the active arms/hands are carried over.
    """
    if len(d) == 0:
        raise EmptyTrajectory(f"demo {d.id} has no steps")
    sides = d.active_sides()
    states = d.states()
    if direction == "r2h":
        if d.embodiment != "robot":
            raise WrongEmbodiment(f"demo {d.id} is {d.embodiment}-sourced; r2h expects robot demos")
        hands = robot_to_human([RobotJointState.from_vector(v[ROBOT]) for v in states], cfg)
        out = np.zeros_like(states)
        for k, h in enumerate(hands):
            out[k, HUMAN] = h.to_vector()
        mask = np.zeros(states.shape[1], dtype=bool)
        for side in sides:
            mask |= human_dims(side)
        return demo_from_states(d.id, "human", d.instruction_id, d.scene, out, mask), None
    if direction == "h2r":
        if d.embodiment != "human":
            raise WrongEmbodiment(f"demo {d.id} is {d.embodiment}-sourced; h2r expects human demos")
        hands = [HumanHandState.from_vector(v[HUMAN]) for v in states]
        eefs, joints, report = human_to_robot(hands, cfg, sides)
        out = np.zeros_like(states)
        for k in range(len(states)):
            out[k, ROBOT] = joints[k].to_vector()
            out[k, EEF] = eefs[k].to_vector()
        mask = np.zeros(states.shape[1], dtype=bool)
        for side in sides:
            mask |= robot_dims(side)
        return demo_from_states(d.id, "robot", d.instruction_id, d.scene, out, mask), report
    raise ValueError(f"direction must be h2r or r2h, got {direction!r}")


def build_demos(cfg: ExperimentConfig):
    """Augmented training and held-out demos plus per-demo IK reports."""
    train_demos, heldout, reports = [], [], []
    for task in cfg.tasks:
        for seed, n, out in ((cfg.seed, cfg.dataset.demos_per_embodiment, train_demos),
                             (cfg.seed + HELDOUT_SEED_OFFSET, cfg.dataset.heldout_per_embodiment, heldout)):
            for d in generate_synthetic_demos(task, n, seed, cfg.retarget):
                aug, rep = augment_with_report(d, cfg.retarget)
                out.append(aug)
                if out is train_demos and rep.steps:
                    reports.append((d.id, rep))
    return train_demos, heldout, reports


def policy_data(cfg: ExperimentConfig, train_demos, heldout=None):
    data = PolicyData.from_demos(train_demos, cfg.horizon, cfg.dataset.stride)
    held = None
    if heldout:
        held = PolicyData.from_demos(heldout, cfg.horizon, cfg.dataset.stride, data.action_stats, data.scene_stats)
    return data, held


def untrained_policy(cfg: ExperimentConfig, data: PolicyData) -> Policy:
    scene_dim = data.index.scene.shape[1]
    return Policy(init_params(cfg.policy_config(scene_dim)), data.action_stats, data.scene_stats)


def train_policy(cfg: ExperimentConfig, data: PolicyData, state: TrainState | None = None,
                 stop_at: int | None = None, train_cfg=None) -> tuple[Policy, TrainState]:
    policy = untrained_policy(cfg, data)
    state = train(policy.params, data, train_cfg or cfg.train, state=state, stop_at=stop_at)
    return Policy(state.params, data.action_stats, data.scene_stats), state


def label_counts(demos) -> np.ndarray:
    return sum(d.label_mask.sum(axis=0) for d in demos)


def stats_csv(demos) -> str:
    stats = compute_norm_stats(demos)
    counts = label_counts(demos)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["dim", "block", "count", "mean", "std"])
    for i in range(len(stats.mean)):
        block = "human" if i < 48 else ("robot" if i < 62 else "eef")
        w.writerow([i, block, int(counts[i]), repr(float(stats.mean[i])), repr(float(stats.std[i]))])
    return buf.getvalue()
