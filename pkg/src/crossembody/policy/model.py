"""Per-row token MLP velocity field with a broadcast condition vector.

Shapes used throughout: ``B`` samples, ``H`` chunk rows, ``D = 76`` action
dims, ``d`` condition width. All tensors are float64.

Condition encoder::

    u = [scene_n, proprio_n * mask, mask]
    c = W2 silu(W1 u + b1) + b2 + E[instruction]        (enc_layers = 2)
    c = W1 u + b1 + E[instruction]                       (enc_layers = 1)

Velocity field, per row ``h``::

    z0 = [x_h, t, c + P_h]
    z_{l+1} = silu(W_l z_l + b_l)
    v_h = W_out z_L + b_out + W_skip x_h               (W_skip only in flow mode)
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import asdict, dataclass

import numpy as np

from ..actionspace import ACTION_DIM
from ..errors import ShapeMismatch, UnknownInstruction

MODES = ("flow", "regression")


@dataclass(frozen=True)
class PolicyConfig:
    scene_dim: int = 3
    vocab_size: int = 1
    horizon: int = 16
    cond_dim: int = 64
    enc_hidden: int = 128
    enc_layers: int = 2
    width: int = 128
    depth: int = 2
    mode: str = "flow"
    skip: bool = True
    init_seed: int = 0

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.enc_layers not in (1, 2):
            raise ValueError("enc_layers must be 1 or 2")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")

    @property
    def uses_skip(self) -> bool:
        # regression mode feeds an all-zero chunk, so the skip path would be dead weight
        return self.skip and self.mode == "flow"

    @property
    def input_dim(self) -> int:
        return self.scene_dim + 2 * ACTION_DIM

    def to_dict(self) -> dict:
        return asdict(self)


def _sigmoid(a):
    return 0.5 * (1.0 + np.tanh(0.5 * a))


def _silu(a):
    s = _sigmoid(a)
    return a * s, s


def _silu_grad(a, s):
    return s * (1.0 + a * (1.0 - s))


def tensor_shapes(cfg: PolicyConfig) -> "OrderedDict[str, tuple]":
    shapes = OrderedDict()
    shapes["embedding"] = (cfg.vocab_size, cfg.cond_dim)
    if cfg.enc_layers == 2:
        shapes["enc.w1"] = (cfg.input_dim, cfg.enc_hidden)
        shapes["enc.b1"] = (cfg.enc_hidden,)
        shapes["enc.w2"] = (cfg.enc_hidden, cfg.cond_dim)
        shapes["enc.b2"] = (cfg.cond_dim,)
    else:
        shapes["enc.w1"] = (cfg.input_dim, cfg.cond_dim)
        shapes["enc.b1"] = (cfg.cond_dim,)
    shapes["row_embedding"] = (cfg.horizon, cfg.cond_dim)
    fan_in = ACTION_DIM + 1 + cfg.cond_dim
    for layer in range(cfg.depth):
        shapes[f"vel.w{layer}"] = (fan_in, cfg.width)
        shapes[f"vel.b{layer}"] = (cfg.width,)
        fan_in = cfg.width
    shapes["vel.w_out"] = (fan_in, ACTION_DIM)
    shapes["vel.b_out"] = (ACTION_DIM,)
    if cfg.uses_skip:
        shapes["vel.w_skip"] = (ACTION_DIM, ACTION_DIM)
    return shapes


class PolicyParams:
    """Named float64 tensors plus the architecture that gives them meaning."""

    def __init__(self, config: PolicyConfig, tensors: "OrderedDict[str, np.ndarray]"):
        self.config = config
        expected = tensor_shapes(config)
        if list(tensors) != list(expected):
            raise ShapeMismatch(f"tensor names {list(tensors)} do not match config {list(expected)}")
        for name, shape in expected.items():
            if tensors[name].shape != shape:
                raise ShapeMismatch(f"tensor {name} has shape {tensors[name].shape}, expected {shape}")
        self.tensors = OrderedDict((k, np.asarray(v, dtype=np.float64)) for k, v in tensors.items())

    def __getitem__(self, name):
        return self.tensors[name]

    def names(self):
        return list(self.tensors)

    def copy(self) -> "PolicyParams":
        return PolicyParams(self.config, OrderedDict((k, v.copy()) for k, v in self.tensors.items()))

    def zeros_like(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, np.zeros_like(v)) for k, v in self.tensors.items())

    def flat(self) -> np.ndarray:
        return np.concatenate([v.reshape(-1) for v in self.tensors.values()])

    def num_parameters(self) -> int:
        return int(sum(v.size for v in self.tensors.values()))

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.tensors.values())


def init_params(cfg: PolicyConfig, seed: int | None = None) -> PolicyParams:
    """LeCun-normal weights, zero biases, small embeddings."""
    rng = np.random.default_rng(cfg.init_seed if seed is None else seed)
    tensors = OrderedDict()
    for name, shape in tensor_shapes(cfg).items():
        if name in ("embedding", "row_embedding"):
            tensors[name] = 0.1 * rng.standard_normal(shape)
        elif name == "vel.w_skip":
            tensors[name] = np.zeros(shape)
        elif ".b" in name:
            tensors[name] = np.zeros(shape)
        else:
            tensors[name] = rng.standard_normal(shape) / np.sqrt(shape[0])
    return PolicyParams(cfg, tensors)


def zero_params(cfg: PolicyConfig) -> PolicyParams:
    return PolicyParams(cfg, OrderedDict((k, np.zeros(s)) for k, s in tensor_shapes(cfg).items()))


# ---------------------------------------------------------------------------
# Forward / backward
# ---------------------------------------------------------------------------


def condition_inputs(scene_n, proprio_n, proprio_mask) -> np.ndarray:
    m = np.asarray(proprio_mask, dtype=np.float64)
    return np.concatenate([scene_n, np.where(m > 0, proprio_n, 0.0), m], axis=-1)


def _check_instruction(params: PolicyParams, instruction):
    instruction = np.asarray(instruction, dtype=np.int64)
    if instruction.size and (instruction.min() < 0 or instruction.max() >= params.config.vocab_size):
        raise UnknownInstruction(f"instruction id outside vocabulary of size {params.config.vocab_size}")
    return instruction


def encode_forward(params: PolicyParams, instruction, u):
    """Condition vectors ``(B, d)`` and the cache needed for backprop."""
    cfg = params.config
    instruction = _check_instruction(params, instruction)
    cache = {"u": u, "instruction": instruction}
    if cfg.enc_layers == 2:
        a1 = u @ params["enc.w1"] + params["enc.b1"]
        h1, s1 = _silu(a1)
        c = h1 @ params["enc.w2"] + params["enc.b2"]
        cache.update(a1=a1, h1=h1, s1=s1)
    else:
        c = u @ params["enc.w1"] + params["enc.b1"]
    return c + params["embedding"][instruction], cache


def encode_backward(params: PolicyParams, cache, dc, grads):
    cfg = params.config
    np.add.at(grads["embedding"], cache["instruction"], dc)
    u = cache["u"]
    if cfg.enc_layers == 2:
        grads["enc.w2"] += cache["h1"].T @ dc
        grads["enc.b2"] += dc.sum(axis=0)
        da1 = (dc @ params["enc.w2"].T) * _silu_grad(cache["a1"], cache["s1"])
        grads["enc.w1"] += u.T @ da1
        grads["enc.b1"] += da1.sum(axis=0)
        return da1 @ params["enc.w1"].T
    grads["enc.w1"] += u.T @ dc
    grads["enc.b1"] += dc.sum(axis=0)
    return dc @ params["enc.w1"].T


def velocity_forward(params: PolicyParams, x, t, c):
    """Velocity ``(B, H, D)`` for noisy chunks ``x`` at times ``t`` under conditions ``c``."""
    cfg = params.config
    B, H, D = x.shape
    if D != ACTION_DIM or H > cfg.horizon:
        raise ShapeMismatch(f"chunk shape {x.shape} incompatible with horizon {cfg.horizon}")
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (B,))
    w0 = params["vel.w0"]
    wx, wt, wc = w0[:D], w0[D], w0[D + 1:]
    rows = params["row_embedding"][:H]
    a = (x.reshape(B * H, D) @ wx).reshape(B, H, -1)
    a += t[:, None, None] * wt
    a += (c @ wc)[:, None, :]
    a += (rows @ wc)[None, :, :]
    a += params["vel.b0"]
    acts = [a]
    sig = []
    z, s = _silu(a)
    sig.append(s)
    zs = [z]
    for layer in range(1, cfg.depth):
        a = z @ params[f"vel.w{layer}"] + params[f"vel.b{layer}"]
        z, s = _silu(a)
        acts.append(a)
        sig.append(s)
        zs.append(z)
    out = z @ params["vel.w_out"] + params["vel.b_out"]
    if cfg.uses_skip:
        out = out + x @ params["vel.w_skip"]
    cache = {"x": x, "t": t, "c": c, "H": H, "acts": acts, "sig": sig, "zs": zs}
    return out, cache


def velocity_backward(params: PolicyParams, cache, dout, grads):
    """Accumulate parameter grads; return (d x, d c)."""
    cfg = params.config
    x, t, c, H = cache["x"], cache["t"], cache["c"], cache["H"]
    B, _, D = x.shape
    zs, acts, sig = cache["zs"], cache["acts"], cache["sig"]
    width_last = zs[-1].shape[-1]
    if cfg.uses_skip:
        grads["vel.w_skip"] += x.reshape(-1, D).T @ dout.reshape(-1, D)
    grads["vel.w_out"] += zs[-1].reshape(-1, width_last).T @ dout.reshape(-1, D)
    grads["vel.b_out"] += dout.sum(axis=(0, 1))
    dz = dout @ params["vel.w_out"].T
    for layer in range(cfg.depth - 1, 0, -1):
        da = dz * _silu_grad(acts[layer], sig[layer])
        zin = zs[layer - 1]
        grads[f"vel.w{layer}"] += zin.reshape(-1, zin.shape[-1]).T @ da.reshape(-1, da.shape[-1])
        grads[f"vel.b{layer}"] += da.sum(axis=(0, 1))
        dz = da @ params[f"vel.w{layer}"].T
    da = dz * _silu_grad(acts[0], sig[0])
    w0 = params["vel.w0"]
    g0 = grads["vel.w0"]
    da_flat = da.reshape(B * H, -1)
    g0[:D] += x.reshape(B * H, D).T @ da_flat
    g0[D] += np.einsum("b,bhw->w", t, da)
    da_rows = da.sum(axis=1)
    da_batch = da.sum(axis=0)
    rows = params["row_embedding"][:H]
    g0[D + 1:] += c.T @ da_rows + rows.T @ da_batch
    grads["vel.b0"] += da_flat.sum(axis=0)
    wc = w0[D + 1:]
    grads["row_embedding"][:H] += da_batch @ wc.T
    dc = da_rows @ wc.T
    dx = da @ w0[:D].T
    if cfg.uses_skip:
        dx = dx + dout @ params["vel.w_skip"].T
    return dx, dc


def forward(params: PolicyParams, instruction, u, x, t):
    c, enc_cache = encode_forward(params, instruction, u)
    out, vel_cache = velocity_forward(params, x, t, c)
    return out, (enc_cache, vel_cache)


def backward(params: PolicyParams, cache, dout):
    grads = params.zeros_like()
    enc_cache, vel_cache = cache
    dx, dc = velocity_backward(params, vel_cache, dout, grads)
    encode_backward(params, enc_cache, dc, grads)
    return grads, dx


# ---------------------------------------------------------------------------
# Single-observation conveniences
# ---------------------------------------------------------------------------


def encode_condition(params: PolicyParams, instruction_id: int, scene_vector, proprio, proprio_mask=None):
    """Condition vector ``(d,)`` for one (already normalized) observation."""
    proprio = np.asarray(proprio, dtype=np.float64)
    if proprio_mask is None:
        proprio_mask = np.ones(ACTION_DIM)
    u = condition_inputs(np.asarray(scene_vector, dtype=np.float64)[None], proprio[None],
                         np.asarray(proprio_mask)[None])
    c, _ = encode_forward(params, [instruction_id], u)
    return c[0]


def velocity_field(params: PolicyParams, noisy_chunk, t: float, condition) -> np.ndarray:
    """Velocity ``(H, 76)`` for one noisy chunk under one condition vector."""
    x = np.asarray(noisy_chunk, dtype=np.float64)[None]
    out, _ = velocity_forward(params, x, np.array([t]), np.asarray(condition, dtype=np.float64)[None])
    return out[0]
