"""Complementary-action augmentation: fill the other embodiment's label dims."""

from __future__ import annotations

import numpy as np

from ..actionspace import (
    EEF,
    HUMAN,
    ROBOT,
    HumanHandState,
    RobotJointState,
    human_dims,
    robot_dims,
    robot_joint_dims,
)
from ..retarget import RetargetConfig, RetargetReport, human_to_robot, robot_to_human
from .demos import Demonstration


def _robot_states(states: np.ndarray) -> list[RobotJointState]:
    return [RobotJointState.from_vector(v[ROBOT]) for v in states]


def augment_with_report(d: Demonstration, cfg: RetargetConfig) -> tuple[Demonstration, RetargetReport]:
    """Like :func:`augment_complementary` but also returns the IK report (empty for robot demos)."""
    report = RetargetReport()
    if d.augmented:
        return d, report
    out = d.copy()
    sides = d.active_sides()
    states = d.states()
    if d.embodiment == "robot":
        hands = robot_to_human(_robot_states(states), cfg)
        for side in sides:
            new = human_dims(side) & ~d.label_mask.any(axis=0)
            for t, h in enumerate(hands[1:]):
                v = np.zeros_like(out.labels[t])
                v[HUMAN] = h.to_vector()
                out.labels[t, new] = v[new]
            out.label_mask[:, new] = True
    else:
        hands = [HumanHandState.from_vector(v[HUMAN]) for v in states]
        eefs, joints, report = human_to_robot(hands, cfg, sides)
        failed = {(s, side) for s, side in report.failures()}
        for side in sides:
            new = robot_dims(side) & ~d.label_mask.any(axis=0)
            joint_dims = robot_joint_dims(side)
            for t in range(len(d)):
                k = t + 1
                v = np.zeros_like(out.labels[t])
                v[ROBOT] = joints[k].to_vector()
                v[EEF] = eefs[k].to_vector()
                out.labels[t, new] = v[new]
                out.label_mask[t, new] = True
                if (k, side) in failed:
                    out.label_mask[t, new & joint_dims] = False
    out.augmented = True
    return out, report


def augment_complementary(d: Demonstration, cfg: RetargetConfig) -> Demonstration:
    """Add retargeted labels for the embodiment the demo was not recorded with.

    Robot demos gain human hand dims (robot-to-human mapping); human demos
    gain robot joint, gripper and EEF dims (human-to-robot mapping). Native
    label values are never modified. Steps whose IK fails keep their EEF
    target but have that arm's joint dims masked out. Already augmented
    demos are returned unchanged.
    """
    return augment_with_report(d, cfg)[0]

