"""Built-in consistency checks run by the ``selftest`` command."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .actionspace import SIDES, EefState
from .config import ExperimentConfig
from .errors import ConfigError
from .geometry import Pose, quat_mul, rotvec_to_quat
from .kinematics import jacobian, jacobian_fd
from .policy.gradcheck import grad_check_detailed
from .policy.losses import loss_value, mutual_imitation_loss, predict
from .policy.model import PolicyConfig, init_params, tensor_shapes
from .retarget import human_to_robot_eef, robot_to_human


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def random_policy_config(rng: np.random.Generator, mode: str) -> PolicyConfig:
    """A small architecture with random sizes, for gradient checks."""
    return PolicyConfig(
        scene_dim=int(rng.integers(1, 7)), vocab_size=int(rng.integers(1, 4)), horizon=int(rng.integers(1, 6)),
        cond_dim=int(rng.integers(2, 9)), enc_hidden=int(rng.integers(2, 9)), enc_layers=int(rng.integers(1, 3)),
        width=int(rng.integers(2, 10)), depth=int(rng.integers(1, 4)), mode=mode,
        skip=bool(rng.integers(0, 2)), init_seed=int(rng.integers(2**31)),
    )


def random_batch(cfg: PolicyConfig, batch_size: int, rng: np.random.Generator, mask_rate: float = 0.5) -> dict:
    """Random normalized batch with random masks and a mix of embodiments."""
    H = cfg.horizon
    return {
        "instruction": rng.integers(0, cfg.vocab_size, batch_size),
        "scene": rng.standard_normal((batch_size, cfg.scene_dim)),
        "proprio": rng.standard_normal((batch_size, 76)),
        "proprio_mask": rng.random((batch_size, 76)) > mask_rate,
        "target": rng.standard_normal((batch_size, H, 76)),
        "target_mask": rng.random((batch_size, H, 76)) > mask_rate,
        "embodiment": rng.integers(0, 2, batch_size),
        "noise": rng.standard_normal((batch_size, H, 76)),
        "t": rng.random(batch_size),
    }


def broken_gradient(tensor: str, factor: float = 1.01):
    """Analytic gradient with one tensor scaled, to prove the checker notices."""
    def fn(params, batch):
        _, grads = mutual_imitation_loss(params, batch)
        grads[tensor] = grads[tensor] * factor
        return grads
    return fn


def check_gradients(cfg: ExperimentConfig, break_tensor: str | None = None) -> list[CheckResult]:
    st = cfg.selftest
    rng = np.random.default_rng([cfg.seed, 1])
    out = []
    for i in range(st.configs):
        pc = random_policy_config(rng, ("flow", "regression")[i % 2])
        if break_tensor is not None and break_tensor not in tensor_shapes(pc):
            pc = PolicyConfig(**{**pc.to_dict(), "enc_layers": 2, "depth": max(pc.depth, 3), "skip": True,
                                 "mode": "flow"})
            if break_tensor not in tensor_shapes(pc):
                raise ConfigError(f"unknown tensor {break_tensor!r}; known: {', '.join(tensor_shapes(pc))}")
        params = init_params(pc)
        batch = random_batch(pc, 4, rng)
        grad_fn = broken_gradient(break_tensor) if break_tensor else None
        res = grad_check_detailed(params, batch, st.eps, st.coords, seed=i, grad_fn=grad_fn)
        ok = res.passed(st.tol)
        detail = f"mode={pc.mode} max_rel_err={res.max_relative_error:.3e}"
        if not ok:
            detail += f" in tensor {res.worst_tensor}"
        out.append(CheckResult(f"gradcheck[{i}]", ok, detail))
    return out


def check_loss_identities(cfg: ExperimentConfig, n: int = 20) -> CheckResult:
    rng = np.random.default_rng([cfg.seed, 2])
    for i in range(n):
        pc = random_policy_config(rng, ("flow", "regression")[i % 2])
        params = init_params(pc)
        batch = random_batch(pc, 6, rng)
        lb = loss_value(params, batch)
        if lb.total != lb.l_r2h + lb.l_h2r:
            return CheckResult("loss_additivity", False, f"batch {i}: total differs from the sum of its terms")
        r2h_only = loss_value(params, batch, use_h2r=False)
        h2r_only = loss_value(params, batch, use_r2h=False)
        if r2h_only.l_r2h != lb.l_r2h or h2r_only.l_h2r != lb.l_h2r:
            return CheckResult("loss_additivity", False, f"batch {i}: terms differ when recomputed alone")
    return CheckResult("loss_additivity", True, f"{n} random batches bit-exact")


def check_zero_at_optimum(cfg: ExperimentConfig) -> CheckResult:
    rng = np.random.default_rng([cfg.seed, 3])
    pc = random_policy_config(rng, "regression")
    params = init_params(pc)
    batch = random_batch(pc, 4, rng)
    pred, _, _ = predict(params, batch)
    batch["target"] = pred
    lb = loss_value(params, batch)
    return CheckResult("zero_at_optimum", lb.total == 0.0, f"regression loss at planted optimum = {lb.total!r}")


def check_mask_invariance(cfg: ExperimentConfig, n: int = 10) -> CheckResult:
    """Values under a mask must not move the loss, in either the targets or the proprioception."""
    rng = np.random.default_rng([cfg.seed, 6])
    for i in range(n):
        pc = random_policy_config(rng, ("flow", "regression")[i % 2])
        params = init_params(pc)
        batch = random_batch(pc, 4, rng)
        before = loss_value(params, batch)
        junk = dict(batch)
        junk["target"] = np.where(batch["target_mask"], batch["target"], rng.standard_normal(batch["target"].shape) * 1e3)
        junk["proprio"] = np.where(batch["proprio_mask"], batch["proprio"], rng.standard_normal(batch["proprio"].shape) * 1e3)
        if loss_value(params, junk) != before:
            return CheckResult("mask_invariance", False, f"batch {i}: masked entries changed the loss")
    return CheckResult("mask_invariance", True, f"{n} random batches unchanged")


def check_jacobians(cfg: ExperimentConfig, n: int = 20) -> CheckResult:
    rng = np.random.default_rng([cfg.seed, 4])
    worst = 0.0
    for side in SIDES:
        chain = cfg.retarget.chains[side]
        for _ in range(n):
            q = chain.sample_configuration(rng)
            worst = max(worst, float(np.max(np.abs(jacobian(chain, q) - jacobian_fd(chain, q)))))
    return CheckResult("jacobian", worst < 1e-5, f"max deviation from central differences {worst:.3e}")


def check_round_trip(cfg: ExperimentConfig, steps: int = 20) -> CheckResult:
    rng = np.random.default_rng([cfg.seed, 5])
    rc = cfg.retarget
    traj = []
    drift = {s: (rng.uniform(-0.05, 0.05, 3), rng.uniform(-0.2, 0.2, 3)) for s in SIDES}
    for k in range(steps):
        a = k / max(steps - 1, 1)
        poses = []
        for s in SIDES:
            home = rc.initial_eef.pose(s)
            dp, dr = drift[s]
            poses.append(Pose(home.position + a * dp, quat_mul(rotvec_to_quat(a * dr), home.orientation)))
        traj.append(EefState(*poses))
    hands = robot_to_human(traj, rc, grippers=[(0.5, 0.5)] * steps)
    back = human_to_robot_eef(hands, rc)
    err = max(float(np.linalg.norm(b.pose(s).position - e.pose(s).position))
              for b, e in zip(back, traj) for s in SIDES)
    return CheckResult("retarget_round_trip", err < 1e-6, f"max EEF position error {err:.3e} m")


def run_selftest(cfg: ExperimentConfig, break_tensor: str | None = None) -> list[CheckResult]:
    results = check_gradients(cfg, break_tensor)
    results.append(check_loss_identities(cfg))
    results.append(check_zero_at_optimum(cfg))
    results.append(check_mask_invariance(cfg))
    results.append(check_jacobians(cfg))
    results.append(check_round_trip(cfg))
    return results
