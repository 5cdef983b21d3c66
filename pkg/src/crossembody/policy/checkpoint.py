"""Checkpoint files: a JSON header followed by named little-endian float64 tensors.

Layout::

    b"CROSSEMBODY-CKPT\\n"  uint32 version  uint32 header_len  header (JSON)
    tensor payloads in header order

The header lists every tensor name and shape and carries the configs,
normalization statistics and training progress.
"""

from __future__ import annotations

import json
import struct
from collections import OrderedDict

import numpy as np

from ..actionspace import NormStats
from ..errors import BadMagic, ShapeMismatch, TruncatedFile, VersionMismatch
from .model import PolicyConfig, PolicyParams, tensor_shapes
from .optim import AdamW, OptimConfig
from .sampling import Policy
from .train import TrainConfig, TrainState

MAGIC = b"CROSSEMBODY-CKPT\n"
VERSION = 1
_HEAD = struct.Struct("<II")


def _train_config_to_dict(cfg: TrainConfig) -> dict:
    return {"steps": cfg.steps, "batch_size": cfg.batch_size, "seed": cfg.seed, "use_r2h": cfg.use_r2h,
            "use_h2r": cfg.use_h2r, "optim": vars(cfg.optim).copy()}


def _train_config_from_dict(d: dict) -> TrainConfig:
    d = dict(d)
    return TrainConfig(optim=OptimConfig(**d.pop("optim")), **d)


def save_checkpoint(path, policy: Policy, state: TrainState | None = None, train_cfg: TrainConfig | None = None,
                    extra: dict | None = None) -> None:
    tensors = OrderedDict()
    for k, v in policy.params.tensors.items():
        tensors[f"params/{k}"] = v
    tensors["stats/action_mean"] = policy.action_stats.mean
    tensors["stats/action_std"] = policy.action_stats.std
    tensors["stats/scene_mean"] = policy.scene_stats.mean
    tensors["stats/scene_std"] = policy.scene_stats.std
    header = {"policy": policy.params.config.to_dict(), "extra": extra or {}}
    if state is not None:
        header["step"] = state.step
        header["adam_t"] = state.optimizer.t
        for k in policy.params.names():
            tensors[f"adam_m/{k}"] = state.optimizer.m[k]
            tensors[f"adam_v/{k}"] = state.optimizer.v[k]
        metric_cols = ("l_r2h", "l_h2r", "total", "grad_norm", "lr")
        tensors["metrics"] = np.array([[r[c] for c in metric_cols] for r in state.metrics],
                                      dtype=np.float64).reshape(-1, len(metric_cols))
    if train_cfg is not None:
        header["train"] = _train_config_to_dict(train_cfg)
    header["tensors"] = [[k, list(v.shape)] for k, v in tensors.items()]
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    parts = [MAGIC, _HEAD.pack(VERSION, len(blob)), blob]
    parts.extend(np.ascontiguousarray(v, dtype="<f8").tobytes() for v in tensors.values())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def _read(path):
    with open(path, "rb") as fh:
        buf = fh.read()
    if not buf.startswith(MAGIC):
        raise BadMagic("not a checkpoint file (bad magic)")
    pos = len(MAGIC)
    if len(buf) < pos + _HEAD.size:
        raise TruncatedFile("checkpoint header is incomplete")
    version, n = _HEAD.unpack_from(buf, pos)
    if version != VERSION:
        raise VersionMismatch(f"checkpoint version {version} is not supported (expected {VERSION})")
    pos += _HEAD.size
    if len(buf) < pos + n:
        raise TruncatedFile("checkpoint header is incomplete")
    header = json.loads(buf[pos:pos + n].decode("utf-8"))
    pos += n
    tensors = OrderedDict()
    for name, shape in header["tensors"]:
        count = int(np.prod(shape)) if shape else 1
        end = pos + 8 * count
        if end > len(buf):
            raise TruncatedFile(f"checkpoint ends inside tensor {name}")
        tensors[name] = np.frombuffer(buf[pos:end], dtype="<f8").reshape(shape).astype(np.float64)
        pos = end
    if pos != len(buf):
        raise TruncatedFile(f"{len(buf) - pos} unexpected trailing bytes in checkpoint")
    return header, tensors


def load_checkpoint(path, expect: PolicyConfig | None = None):
    """Load ``(policy, state_or_None, train_config_or_None, extra)``.

    Raises:
        ShapeMismatch: the stored architecture differs from ``expect``.
    """
    header, tensors = _read(path)
    cfg = PolicyConfig(**header["policy"])
    if expect is not None and expect != cfg:
        raise ShapeMismatch(f"checkpoint architecture {cfg} does not match configured {expect}")
    names = list(tensor_shapes(cfg))
    params = PolicyParams(cfg, OrderedDict((k, tensors[f"params/{k}"]) for k in names))
    policy = Policy(params, NormStats(tensors["stats/action_mean"], tensors["stats/action_std"]),
                    NormStats(tensors["stats/scene_mean"], tensors["stats/scene_std"]))
    train_cfg = _train_config_from_dict(header["train"]) if "train" in header else None
    state = None
    if "step" in header:
        opt = AdamW([(k, params[k].shape) for k in names], train_cfg.optim if train_cfg else OptimConfig())
        opt.t = int(header["adam_t"])
        for k in names:
            opt.m[k] = tensors[f"adam_m/{k}"]
            opt.v[k] = tensors[f"adam_v/{k}"]
        cols = ("l_r2h", "l_h2r", "total", "grad_norm", "lr")
        metrics = [{"step": i, **{c: float(v) for c, v in zip(cols, row)}}
                   for i, row in enumerate(tensors["metrics"])]
        state = TrainState(params.copy(), opt, int(header["step"]), metrics)
    return policy, state, train_cfg, header.get("extra", {})
