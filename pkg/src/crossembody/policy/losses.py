"""Flow-matching and mutual-imitation objectives with analytic gradients.

A batch is a dict of normalized arrays:

``instruction`` (B,), ``scene`` (B, S), ``proprio`` (B, 76),
``proprio_mask`` (B, 76), ``target`` (B, H, 76), ``target_mask`` (B, H, 76),
``embodiment`` (B,) with 0 = robot and 1 = human. Flow mode also needs
``noise`` (B, H, 76) and ``t`` (B,).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..actionspace import EEF, HUMAN, ROBOT
from ..errors import ShapeMismatch
from .model import PolicyParams, backward, condition_inputs, forward

ROBOT_SOURCE = 0
HUMAN_SOURCE = 1

HUMAN_BLOCK = np.zeros(76, dtype=bool)
HUMAN_BLOCK[HUMAN] = True
ROBOT_BLOCK = np.zeros(76, dtype=bool)
ROBOT_BLOCK[ROBOT] = True
ROBOT_BLOCK[EEF] = True


@dataclass(frozen=True)
class LossBreakdown:
    l_r2h: float
    l_h2r: float
    total: float


@dataclass
class FlowSample:
    """One clean chunk, its noise draw and interpolation time."""

    target: np.ndarray
    noise: np.ndarray
    t: float
    instruction_id: int
    scene: np.ndarray
    proprio: np.ndarray
    proprio_mask: np.ndarray
    mask: np.ndarray

    def __post_init__(self):
        if not 0.0 <= self.t <= 1.0:
            raise ValueError("t must lie in [0, 1]")
        if self.target.shape != self.noise.shape or self.target.shape != np.shape(self.mask):
            raise ShapeMismatch("target, noise and mask shapes differ")

    def as_batch(self) -> dict:
        return {
            "instruction": np.array([self.instruction_id]),
            "scene": np.asarray(self.scene, dtype=np.float64)[None],
            "proprio": np.asarray(self.proprio, dtype=np.float64)[None],
            "proprio_mask": np.asarray(self.proprio_mask, dtype=bool)[None],
            "target": np.asarray(self.target, dtype=np.float64)[None],
            "target_mask": np.asarray(self.mask, dtype=bool)[None],
            "noise": np.asarray(self.noise, dtype=np.float64)[None],
            "t": np.array([self.t], dtype=np.float64),
            "embodiment": np.array([ROBOT_SOURCE]),
        }


def model_inputs(params: PolicyParams, batch: dict):
    """Network input ``x``, time ``t`` and regression goal for a batch.

    Masked target entries are zeroed first, so their values never reach the
    network or the loss.
    """
    mask = np.asarray(batch["target_mask"], dtype=bool)
    target = np.where(mask, batch["target"], 0.0)
    if params.config.mode == "flow":
        t = np.asarray(batch["t"], dtype=np.float64)
        z = np.asarray(batch["noise"], dtype=np.float64)
        x = (1.0 - t)[:, None, None] * z + t[:, None, None] * target
        return x, t, target - z
    B = target.shape[0]
    return np.zeros_like(target), np.zeros(B), target


def predict(params: PolicyParams, batch: dict):
    u = condition_inputs(batch["scene"], batch["proprio"], batch["proprio_mask"])
    x, t, goal = model_inputs(params, batch)
    pred, cache = forward(params, batch["instruction"], u, x, t)
    return pred, goal, cache


def _group_term(err, mask, select, block):
    """Mean squared error over selected samples and dims; also its d/d err."""
    e = err[select]
    m = mask[select] & block
    count = int(m.sum())
    grad = np.zeros_like(err)
    if count == 0:
        return 0.0, grad
    sq = np.where(m, e * e, 0.0)
    value = float(np.sum(sq)) / count
    grad[select] = np.where(m, 2.0 * e / count, 0.0)
    return value, grad


def group_losses(err, mask, embodiment, use_r2h: bool = True, use_h2r: bool = True):
    """Grouped squared errors: (l_r2h, l_h2r, d loss / d err).

    ``l_r2h`` covers robot-sourced samples: the robot-native dims plus the
    retargeted human dims. ``l_h2r`` is the mirror image for human-sourced
    samples. Each part is a mean over its unmasked entries.
    """
    mask = np.asarray(mask, dtype=bool)
    embodiment = np.asarray(embodiment)
    grad = np.zeros_like(err)
    l_r2h = 0.0
    l_h2r = 0.0
    if use_r2h:
        robot = embodiment == ROBOT_SOURCE
        native, g1 = _group_term(err, mask, robot, ROBOT_BLOCK)
        cross, g2 = _group_term(err, mask, robot, HUMAN_BLOCK)
        l_r2h = native + cross
        grad += g1 + g2
    if use_h2r:
        human = embodiment == HUMAN_SOURCE
        native, g1 = _group_term(err, mask, human, HUMAN_BLOCK)
        cross, g2 = _group_term(err, mask, human, ROBOT_BLOCK)
        l_h2r = native + cross
        grad += g1 + g2
    return l_r2h, l_h2r, grad


def mutual_imitation_loss(params: PolicyParams, batch: dict, use_r2h: bool = True, use_h2r: bool = True):
    """Combined objective ``l_r2h + l_h2r`` and its gradient.

    Regression mode compares predicted and target chunks directly; flow mode
    compares predicted and target velocities. Both use the same grouping.

    Returns:
        (LossBreakdown, grads) with grads an ordered dict keyed like the params.
    """
    pred, goal, cache = predict(params, batch)
    l_r2h, l_h2r, dpred = group_losses(pred - goal, batch["target_mask"], batch["embodiment"], use_r2h, use_h2r)
    grads, _ = backward(params, cache, dpred)
    return LossBreakdown(l_r2h, l_h2r, l_r2h + l_h2r), grads


def loss_value(params: PolicyParams, batch: dict, use_r2h: bool = True, use_h2r: bool = True) -> LossBreakdown:
    pred, goal, _ = predict(params, batch)
    l_r2h, l_h2r, _ = group_losses(pred - goal, batch["target_mask"], batch["embodiment"], use_r2h, use_h2r)
    return LossBreakdown(l_r2h, l_h2r, l_r2h + l_h2r)


def cfm_loss(params: PolicyParams, sample: FlowSample):
    """Mean over unmasked entries of ``|v(x_t, t, c) - (A* - z)|^2``; returns (loss, grads)."""
    batch = sample.as_batch()
    mask = batch["target_mask"]
    target = np.where(mask, batch["target"], 0.0)
    t = batch["t"]
    x = (1.0 - t)[:, None, None] * batch["noise"] + t[:, None, None] * target
    u = condition_inputs(batch["scene"], batch["proprio"], batch["proprio_mask"])
    pred, cache = forward(params, batch["instruction"], u, x, t)
    err = pred - (target - batch["noise"])
    count = int(mask.sum())
    if count == 0:
        return 0.0, params.zeros_like()
    loss = float(np.sum(np.where(mask, err * err, 0.0))) / count
    grads, _ = backward(params, cache, np.where(mask, 2.0 * err / count, 0.0))
    return loss, grads
