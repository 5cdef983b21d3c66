"""Normalized batch assembly for training and evaluation."""

from __future__ import annotations

import numpy as np

from ..actionspace import NormStats
from ..dataset.samples import SampleIndex, compute_norm_stats, compute_scene_stats
from .losses import HUMAN_SOURCE, ROBOT_SOURCE


class PolicyData:
    """A :class:`SampleIndex` whose labels, proprio and scenes are pre-normalized.

    Masked label and proprio entries are stored as zeros after normalization
    so that their raw values cannot leak into a batch.
    """

    def __init__(self, index: SampleIndex, action_stats: NormStats, scene_stats: NormStats):
        self.index = index
        self.action_stats = action_stats
        self.scene_stats = scene_stats
        self._labels = np.where(index.label_mask, action_stats.normalize(index.labels), 0.0)
        self._proprio = np.where(index.proprio_mask, action_stats.normalize(index.proprio), 0.0)
        self._scene = scene_stats.normalize(index.scene) if len(index.scene) else index.scene
        emb = index.sample_embodiment()
        self.robot_samples = np.flatnonzero(emb == ROBOT_SOURCE)
        self.human_samples = np.flatnonzero(emb == HUMAN_SOURCE)

    @classmethod
    def from_demos(cls, demos, horizon: int, stride: int = 1, action_stats=None, scene_stats=None):
        demos = list(demos)
        action_stats = action_stats if action_stats is not None else compute_norm_stats(demos)
        scene_stats = scene_stats if scene_stats is not None else compute_scene_stats(demos)
        return cls(SampleIndex(demos, horizon, stride), action_stats, scene_stats)

    @property
    def horizon(self) -> int:
        return self.index.horizon

    def __len__(self):
        return len(self.index)

    def batch(self, idx) -> dict:
        """Normalized batch for sample indices ``idx`` (no noise or time yet)."""
        ix = self.index
        idx = np.asarray(idx, dtype=np.int64)
        d = ix.demo[idx]
        t = ix.start[idx]
        steps = t[:, None] + np.arange(ix.horizon)[None, :]
        last = ix._length[d][:, None] - 1
        rows = ix._offset[d][:, None] + np.minimum(steps, last)
        first = ix._offset[d] + t
        return {
            "instruction": ix.instruction[d],
            "scene": self._scene[d],
            "proprio": self._proprio[first],
            "proprio_mask": ix.proprio_mask[first],
            "target": self._labels[rows],
            "target_mask": ix.label_mask[rows],
            "embodiment": ix.embodiment[d],
        }


def add_flow_noise(batch: dict, rng: np.random.Generator) -> dict:
    """Attach a Gaussian noise chunk and a uniform time to every sample."""
    B = len(batch["instruction"])
    out = dict(batch)
    out["noise"] = rng.standard_normal(np.shape(batch["target"]))
    out["t"] = rng.random(B)
    return out
