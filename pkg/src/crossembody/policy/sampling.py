"""Euler integration of the learned velocity field into action chunks."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..actionspace import ACTION_DIM, ActionChunk, NormStats, canonicalize
from .model import PolicyParams, condition_inputs, encode_forward, velocity_forward


@dataclass
class Policy:
    """Parameters together with the statistics that map to and from raw units."""

    params: PolicyParams
    action_stats: NormStats
    scene_stats: NormStats

    @property
    def horizon(self) -> int:
        return self.params.config.horizon


@dataclass
class Observation:
    instruction_id: int
    scene: np.ndarray
    proprio: np.ndarray
    proprio_mask: np.ndarray


def integrate(params: PolicyParams, c: np.ndarray, noise: np.ndarray, n_steps: int) -> np.ndarray:
    """Normalized chunks from conditions ``c`` (B, d) and initial noise (B, H, 76).

    Flow mode takes ``n_steps`` equal Euler steps from t = 0 to 1. Regression
    mode ignores the noise and returns the direct prediction.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    B = c.shape[0]
    if params.config.mode == "regression":
        out, _ = velocity_forward(params, np.zeros_like(noise), np.zeros(B), c)
        return out
    x = np.array(noise, dtype=np.float64)
    dt = 1.0 / n_steps
    for k in range(n_steps):
        v, _ = velocity_forward(params, x, np.full(B, k * dt), c)
        x = x + dt * v
    return x


def sample_normalized(params: PolicyParams, batch: dict, n_steps: int, rng: np.random.Generator) -> np.ndarray:
    """Normalized chunk predictions for a normalized batch."""
    u = condition_inputs(batch["scene"], batch["proprio"], batch["proprio_mask"])
    c, _ = encode_forward(params, batch["instruction"], u)
    B = len(batch["instruction"])
    noise = rng.standard_normal((B, params.config.horizon, ACTION_DIM))
    return integrate(params, c, noise, n_steps)


def sample_batch(policy: Policy, observations, n_steps: int = 10, seed: int = 0) -> np.ndarray:
    """Raw-unit chunks (B, H, 76) for a list of observations, re-canonicalized."""
    stats = policy.action_stats
    pmask = np.stack([np.asarray(o.proprio_mask, dtype=bool) for o in observations])
    proprio = np.stack([np.asarray(o.proprio, dtype=np.float64) for o in observations])
    batch = {
        "instruction": np.array([o.instruction_id for o in observations], dtype=np.int64),
        "scene": policy.scene_stats.normalize(np.stack([o.scene for o in observations])),
        "proprio": np.where(pmask, stats.normalize(proprio), 0.0),
        "proprio_mask": pmask,
    }
    rng = np.random.default_rng(seed)
    raw = stats.denormalize(sample_normalized(policy.params, batch, n_steps, rng))
    return np.stack([[canonicalize(row) for row in chunk] for chunk in raw])


def sample_actions(policy: Policy, observation: Observation, n_steps: int = 10, seed: int = 0) -> ActionChunk:
    """One action chunk for one observation; deterministic given ``seed``."""
    values = sample_batch(policy, [observation], n_steps, seed)[0]
    return ActionChunk(values, np.ones(ACTION_DIM, dtype=bool))
