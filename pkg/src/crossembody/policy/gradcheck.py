"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFinite
from .losses import group_losses, mutual_imitation_loss, predict
from .model import PolicyParams

DENOM_FLOOR = 1e-12


def relative_error(analytic: float, numeric: float, floor: float = DENOM_FLOOR) -> float:
    """``|a - n| / max(|a|, |n|)``, or 0 when both magnitudes sit below ``floor``."""
    denom = max(abs(analytic), abs(numeric))
    if denom < floor:
        return 0.0
    return abs(analytic - numeric) / denom


@dataclass
class GradCheckResult:
    max_relative_error: float
    worst_tensor: str | None
    per_tensor: dict = field(default_factory=dict)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_relative_error < tol


def _pick_coordinates(rng, sizes, bounds, n):
    """``n`` distinct flat indices: one per tensor first (while ``n`` allows), the rest uniform."""
    first = [int(b - sz + rng.integers(sz)) for sz, b in zip(sizes, bounds)][:n]
    rest = np.setdiff1d(np.arange(int(bounds[-1])), first)
    extra = rng.choice(rest, size=n - len(first), replace=False) if n > len(first) else []
    return np.concatenate([np.array(first, dtype=np.int64), np.asarray(extra, dtype=np.int64)])


def _loss_weights(batch, use_r2h, use_h2r):
    """Per-entry weights ``w`` with loss = sum(w * err**2)."""
    shape = np.shape(batch["target"])
    _, _, g = group_losses(np.ones(shape), batch["target_mask"], batch["embodiment"], use_r2h, use_h2r)
    return 0.5 * g


def _loss_difference(up: PolicyParams, down: PolicyParams, batch, weights) -> float:
    """``L(up) - L(down)`` as ``sum(w (e+ - e-)(e+ + e-))``, avoiding cancellation."""
    pred_up, goal, _ = predict(up, batch)
    pred_down, _, _ = predict(down, batch)
    e_up = pred_up - goal
    e_down = pred_down - goal
    return float(np.sum(weights * (e_up - e_down) * (e_up + e_down)))


def grad_check_detailed(params: PolicyParams, batch: dict, eps: float = 1e-6, n_coords: int = 200,
                        seed: int = 0, use_r2h: bool = True, use_h2r: bool = True,
                        grad_fn=None) -> GradCheckResult:
    """Compare analytic and central-difference gradients on a random coordinate subsample.

    The subsample covers every tensor at least once, then fills up uniformly.

    The difference of the two perturbed losses is accumulated per entry as
    ``w (e+ - e-)(e+ + e-)`` rather than as ``L+ - L-``; both are the same
    central difference, the former keeps tiny gradients above roundoff.

    Args:
        grad_fn: optional replacement for the analytic gradient, used to test
            that the checker itself catches broken gradients.

    Raises:
        NonFinite: any parameter, loss or gradient entry is NaN or infinite.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if not params.all_finite():
        bad = [k for k, v in params.tensors.items() if not np.all(np.isfinite(v))]
        raise NonFinite(f"non-finite parameter values in {', '.join(bad)}")
    if grad_fn is None:
        _, grads = mutual_imitation_loss(params, batch, use_r2h, use_h2r)
    else:
        grads = grad_fn(params, batch)
    names = params.names()
    sizes = np.array([params[k].size for k in names])
    total = int(sizes.sum())
    rng = np.random.default_rng(seed)
    bounds = np.cumsum(sizes)
    picks = _pick_coordinates(rng, sizes, bounds, min(n_coords, total))
    weights = _loss_weights(batch, use_r2h, use_h2r)
    up_params = params.copy()
    down_params = params.copy()
    per_tensor: dict = {}
    for flat in np.sort(picks):
        k = int(np.searchsorted(bounds, flat, side="right"))
        name = names[k]
        local = int(flat - (bounds[k] - sizes[k]))
        up_arr = up_params.tensors[name].reshape(-1)
        down_arr = down_params.tensors[name].reshape(-1)
        orig = up_arr[local]
        up_arr[local] = orig + eps
        down_arr[local] = orig - eps
        numeric = _loss_difference(up_params, down_params, batch, weights) / (2.0 * eps)
        up_arr[local] = orig
        down_arr[local] = orig
        analytic = float(grads[name].reshape(-1)[local])
        if not (np.isfinite(numeric) and np.isfinite(analytic)):
            raise NonFinite(f"non-finite gradient for {name}[{local}]")
        err = relative_error(analytic, numeric)
        per_tensor[name] = max(per_tensor.get(name, 0.0), err)
    worst = max(per_tensor, key=per_tensor.get) if per_tensor else None
    return GradCheckResult(per_tensor[worst] if worst else 0.0, worst, per_tensor)


def grad_check(params: PolicyParams, batch: dict, eps: float = 1e-6, n_coords: int = 200, seed: int = 0) -> float:
    """Max relative error between analytic and finite-difference gradients."""
    return grad_check_detailed(params, batch, eps, n_coords, seed).max_relative_error
