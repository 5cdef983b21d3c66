"""Chunked training samples and normalization statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..actionspace import ACTION_DIM, ActionChunk, NormStats
from .demos import EMBODIMENTS, Demonstration


@dataclass(eq=False)
class TrainingSample:
    instruction_id: int
    scene: np.ndarray
    proprio: np.ndarray
    proprio_mask: np.ndarray
    target: ActionChunk
    source_embodiment: str


class SampleIndex:
    """All chunk start points of a demo collection, gathered into batches on demand.

    Labels of every demo are stored flat; a sample ``(demo, t)`` reads rows
    ``t .. t+H-1`` and repeats the final row (with ``pad`` set) past the end.
    """

    def __init__(self, demos, horizon: int, stride: int = 1):
        if horizon < 1 or stride < 1:
            raise ValueError("horizon and stride must be >= 1")
        demos = list(demos)
        self.horizon = horizon
        self.stride = stride
        self.demo_ids = [d.id for d in demos]
        lengths = np.array([len(d) for d in demos], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(lengths)[:-1]]).astype(np.int64)
        self.labels = np.concatenate([d.labels for d in demos]) if demos else np.zeros((0, ACTION_DIM))
        self.label_mask = np.concatenate([d.label_mask for d in demos]) if demos else np.zeros((0, ACTION_DIM), bool)
        self.proprio = np.concatenate([d.proprio for d in demos]) if demos else np.zeros((0, ACTION_DIM))
        self.proprio_mask = (np.concatenate([d.proprio_mask for d in demos]) if demos
                             else np.zeros((0, ACTION_DIM), bool))
        starts, owner = [], []
        for k, d in enumerate(demos):
            ts = np.arange(0, len(d), stride)
            starts.append(ts)
            owner.append(np.full(len(ts), k))
        self.start = np.concatenate(starts).astype(np.int64) if demos else np.zeros(0, np.int64)
        self.demo = np.concatenate(owner).astype(np.int64) if demos else np.zeros(0, np.int64)
        self._offset = offsets
        self._length = lengths
        self.instruction = np.array([d.instruction_id for d in demos], dtype=np.int64)
        self.embodiment = np.array([EMBODIMENTS.index(d.embodiment) for d in demos], dtype=np.int64)
        scene_dim = len(demos[0].scene) if demos else 0
        self.scene = np.stack([d.scene for d in demos]) if demos else np.zeros((0, scene_dim))

    def __len__(self):
        return len(self.start)

    def sample_embodiment(self) -> np.ndarray:
        return self.embodiment[self.demo]

    def gather(self, idx) -> dict:
        """Batch arrays for sample indices ``idx``."""
        idx = np.asarray(idx, dtype=np.int64)
        d = self.demo[idx]
        t = self.start[idx]
        steps = t[:, None] + np.arange(self.horizon)[None, :]
        last = self._length[d][:, None] - 1
        pad = steps > last
        rows = self._offset[d][:, None] + np.minimum(steps, last)
        first = self._offset[d] + t
        return {
            "instruction": self.instruction[d],
            "scene": self.scene[d],
            "proprio": self.proprio[first],
            "proprio_mask": self.proprio_mask[first],
            "target": self.labels[rows],
            "target_mask": self.label_mask[rows],
            "pad": pad,
            "embodiment": self.embodiment[d],
        }


def chunk_samples(d: Demonstration, horizon: int, stride: int = 1) -> list[TrainingSample]:
    """One sample per start index ``0, stride, 2*stride, ...``; ends padded by repetition."""
    index = SampleIndex([d], horizon, stride)
    if len(index) == 0:
        return []
    b = index.gather(np.arange(len(index)))
    return [
        TrainingSample(
            int(b["instruction"][i]), b["scene"][i], b["proprio"][i], b["proprio_mask"][i],
            ActionChunk(b["target"][i], b["target_mask"][i], b["pad"][i]), d.embodiment,
        )
        for i in range(len(index))
    ]


def expected_sample_count(length: int, stride: int) -> int:
    return math.ceil(length / stride)


def compute_norm_stats(demos) -> NormStats:
    """Per-dim mean and population std over labelled (unmasked) steps.

    Dims never labelled get mean 0 and std 1; std is floored at 1e-6.
    """
    total = np.zeros(ACTION_DIM)
    count = np.zeros(ACTION_DIM)
    for d in demos:
        total += np.where(d.label_mask, d.labels, 0.0).sum(axis=0)
        count += d.label_mask.sum(axis=0)
    mean = np.divide(total, count, out=np.zeros(ACTION_DIM), where=count > 0)
    sq = np.zeros(ACTION_DIM)
    for d in demos:
        sq += np.where(d.label_mask, (d.labels - mean) ** 2, 0.0).sum(axis=0)
    var = np.divide(sq, count, out=np.ones(ACTION_DIM), where=count > 0)
    std = np.sqrt(var)
    std[count == 0] = 1.0
    return NormStats(mean, std)


def compute_scene_stats(demos) -> NormStats:
    demos = list(demos)
    if not demos:
        return NormStats(np.zeros(0), np.ones(0))
    scenes = np.stack([d.scene for d in demos])
    return NormStats(scenes.mean(axis=0), scenes.std(axis=0))
