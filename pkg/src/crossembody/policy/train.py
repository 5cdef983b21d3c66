"""Deterministic training loop for the mutual-imitation objective."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteLoss
from .data import PolicyData, add_flow_noise
from .losses import mutual_imitation_loss
from .model import PolicyParams
from .optim import AdamW, OptimConfig, global_norm, learning_rate

METRIC_COLUMNS = ("step", "l_r2h", "l_h2r", "total", "grad_norm", "lr")


@dataclass(frozen=True)
class TrainConfig:
    steps: int = 5000
    batch_size: int = 32
    seed: int = 0
    use_r2h: bool = True
    use_h2r: bool = True
    optim: OptimConfig = field(default_factory=OptimConfig)


@dataclass
class TrainState:
    """Everything needed to continue a run exactly where it stopped."""

    params: PolicyParams
    optimizer: AdamW
    step: int = 0
    metrics: list = field(default_factory=list)


def new_state(params: PolicyParams, cfg: TrainConfig) -> TrainState:
    return TrainState(params.copy(), AdamW.for_params(params, cfg.optim))


def draw_batch(data: PolicyData, cfg: TrainConfig, step: int, mode: str) -> dict:
    """The batch for ``step``; depends only on ``(seed, step)``.

    With both objectives enabled half the batch is robot-sourced and half
    human-sourced; an ablated objective's embodiment is never drawn.
    """
    rng = np.random.default_rng([cfg.seed, step])
    pools = []
    if cfg.use_r2h and len(data.robot_samples):
        pools.append(data.robot_samples)
    if cfg.use_h2r and len(data.human_samples):
        pools.append(data.human_samples)
    if not pools:
        raise ValueError("no training samples for the enabled objectives")
    sizes = [cfg.batch_size // len(pools)] * len(pools)
    sizes[-1] += cfg.batch_size - sum(sizes)
    idx = np.concatenate([pool[rng.integers(0, len(pool), n)] for pool, n in zip(pools, sizes)])
    batch = data.batch(idx)
    if mode == "flow":
        batch = add_flow_noise(batch, rng)
    return batch


def train_step(state: TrainState, data: PolicyData, cfg: TrainConfig) -> dict:
    params = state.params
    step = state.step
    batch = draw_batch(data, cfg, step, params.config.mode)
    # overflow is reported below as NonFiniteLoss, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore"):
        losses, grads = mutual_imitation_loss(params, batch, cfg.use_r2h, cfg.use_h2r)
        gnorm = global_norm(grads)
    if not (np.isfinite(losses.total) and np.isfinite(gnorm)):
        raise NonFiniteLoss(
            f"non-finite loss at step {step}: l_r2h={losses.l_r2h!r} l_h2r={losses.l_h2r!r} grad_norm={gnorm!r}"
        )
    clip = cfg.optim.grad_clip
    if clip and gnorm > clip:
        scale = clip / gnorm
        for g in grads.values():
            g *= scale
    lr = learning_rate(step, cfg.steps, cfg.optim)
    state.optimizer.step(params, grads, lr)
    row = {"step": step, "l_r2h": losses.l_r2h, "l_h2r": losses.l_h2r, "total": losses.total,
           "grad_norm": gnorm, "lr": lr}
    state.metrics.append(row)
    state.step += 1
    return row


def train(params: PolicyParams, data: PolicyData, cfg: TrainConfig, state: TrainState | None = None,
          stop_at: int | None = None, on_step=None) -> TrainState:
    """Run (or continue) training until ``stop_at`` or ``cfg.steps``.

    Args:
        params: initial parameters, ignored when ``state`` is given.
        state: a state from an earlier call or a checkpoint; continuing it
            reproduces the uninterrupted run exactly.
        on_step: optional callback receiving each metrics row.

    Raises:
        NonFiniteLoss: a loss or gradient became NaN or infinite.
    """
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if state is None:
        state = new_state(params, cfg)
    end = cfg.steps if stop_at is None else min(stop_at, cfg.steps)
    while state.step < end:
        row = train_step(state, data, cfg)
        if on_step is not None:
            on_step(row)
    return state


def format_metrics(rows) -> str:
    lines = [",".join(METRIC_COLUMNS)]
    for r in rows:
        lines.append(",".join(repr(r[c]) if c != "step" else str(r[c]) for c in METRIC_COLUMNS))
    return "\n".join(lines) + "\n"


def parse_metrics(text: str) -> list[dict]:
    lines = text.strip().splitlines()
    cols = lines[0].split(",")
    out = []
    for line in lines[1:]:
        vals = line.split(",")
        out.append({c: (int(v) if c == "step" else float(v)) for c, v in zip(cols, vals)})
    return out
