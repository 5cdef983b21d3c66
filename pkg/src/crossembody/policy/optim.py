"""Adam with decoupled weight decay and a warmup-then-constant schedule."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class OptimConfig:
    lr: float = 1e-4
    weight_decay: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    warmup_frac: float = 0.02
    grad_clip: float = 0.0


def warmup_steps(total_steps: int, warmup_frac: float) -> int:
    return max(1, math.ceil(warmup_frac * total_steps)) if warmup_frac > 0 else 0


def learning_rate(step: int, total_steps: int, cfg: OptimConfig) -> float:
    """Linear warmup over the first ``warmup_frac`` of steps, constant afterwards."""
    n = warmup_steps(total_steps, cfg.warmup_frac)
    if n and step < n:
        return cfg.lr * (step + 1) / n
    return cfg.lr


def global_norm(grads) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


class AdamW:
    """Moment buffers plus the update rule; parameters are updated in place."""

    def __init__(self, names_shapes, cfg: OptimConfig):
        self.cfg = cfg
        self.m = OrderedDict((k, np.zeros(s)) for k, s in names_shapes)
        self.v = OrderedDict((k, np.zeros(s)) for k, s in names_shapes)
        self.t = 0

    @classmethod
    def for_params(cls, params, cfg: OptimConfig) -> "AdamW":
        return cls([(k, v.shape) for k, v in params.tensors.items()], cfg)

    def step(self, params, grads, lr: float) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1 ** self.t
        bc2 = 1.0 - c.beta2 ** self.t
        for name, p in params.tensors.items():
            g = grads[name]
            if c.weight_decay:
                p *= 1.0 - lr * c.weight_decay
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * (g * g)
            p -= lr * (m / bc1) / (np.sqrt(v / bc2) + c.eps)
