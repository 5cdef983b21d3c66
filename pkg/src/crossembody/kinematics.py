"""Serial-chain forward kinematics, geometric Jacobian and DLS inverse kinematics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from importlib import resources
from typing import Sequence

import numpy as np
import yaml

from .errors import ConfigError, NotConverged, SeedOutOfLimits
from .geometry import (
    Pose,
    geodesic_distance,
    matrix_to_quat,
    quat_conj,
    quat_mul,
    quat_to_rotvec,
    rotation_about,
)

N_JOINTS = 6
PRESETS = ("arm_a", "arm_b")


@dataclass(frozen=True, eq=False)
class JointSpec:
    """Revolute joint: fixed parent-frame offset, then rotation about ``axis``."""

    axis: np.ndarray
    origin_offset: Pose = field(default_factory=Pose)
    limits: tuple = (-math.pi, math.pi)
    name: str = ""

    def __post_init__(self):
        axis = np.array(self.axis, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
            raise ValueError(f"joint {self.name!r}: axis must be unit length")
        lo, hi = (float(v) for v in self.limits)
        if not lo < hi:
            raise ValueError(f"joint {self.name!r}: limits need min < max")
        axis.flags.writeable = False
        object.__setattr__(self, "axis", axis)
        object.__setattr__(self, "limits", (lo, hi))


@dataclass(frozen=True, eq=False)
class KinematicChain:
    joints: tuple
    base_frame: Pose = field(default_factory=Pose)
    tool_offset: Pose = field(default_factory=Pose)
    home: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        joints = tuple(self.joints)
        if len(joints) != N_JOINTS:
            raise ValueError(f"chain needs exactly {N_JOINTS} revolute joints, got {len(joints)}")
        object.__setattr__(self, "joints", joints)
        lower = np.array([j.limits[0] for j in joints])
        upper = np.array([j.limits[1] for j in joints])
        home = np.zeros(N_JOINTS) if self.home is None else np.array(self.home, dtype=np.float64)
        home = np.clip(home.reshape(N_JOINTS), lower, upper)
        for arr in (lower, upper, home):
            arr.flags.writeable = False
        object.__setattr__(self, "home", home)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        # cached rotation/translation pieces for the inner loops
        object.__setattr__(self, "_offsets", tuple((j.origin_offset.rotation, j.origin_offset.position) for j in joints))
        object.__setattr__(self, "_axes", tuple(tuple(j.axis) for j in joints))
        object.__setattr__(self, "_base", (self.base_frame.rotation, self.base_frame.position))
        object.__setattr__(self, "_tool", (self.tool_offset.rotation, self.tool_offset.position))

    def with_base(self, base_frame: Pose) -> "KinematicChain":
        return replace(self, base_frame=base_frame)

    def within_limits(self, q, tol: float = 1e-12) -> bool:
        q = np.asarray(q, dtype=np.float64)
        return bool(np.all(q >= self.lower - tol) and np.all(q <= self.upper + tol))

    def clamp(self, q) -> np.ndarray:
        return np.clip(np.asarray(q, dtype=np.float64), self.lower, self.upper)

    def sample_configuration(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.lower, self.upper)

    def reach_sphere(self) -> tuple:
        """``(center, radius)`` of a ball containing every reachable tool position.

        The first joint origin is fixed in the world; everything after it can
        swing by at most the summed lengths of the remaining offsets.
        """
        r0, p0 = self._base
        center = p0 + r0 @ self._offsets[0][1]
        radius = sum(float(np.linalg.norm(p)) for _, p in self._offsets[1:]) + float(np.linalg.norm(self._tool[1]))
        return center, radius


# ---------------------------------------------------------------------------
# Chain files
# ---------------------------------------------------------------------------


def _pose_from_dict(d) -> Pose:
    if d is None:
        return Pose()
    return Pose(d.get("position", (0.0, 0.0, 0.0)), d.get("orientation", (1.0, 0.0, 0.0, 0.0)))


def _pose_to_dict(p: Pose) -> dict:
    return {"position": [float(v) for v in p.position], "orientation": [float(v) for v in p.orientation]}


def chain_from_dict(d: dict) -> KinematicChain:
    try:
        joints = [
            JointSpec(
                axis=j["axis"],
                origin_offset=_pose_from_dict(j.get("offset")),
                limits=tuple(j["limits"]),
                name=j.get("name", f"joint{i + 1}"),
            )
            for i, j in enumerate(d["joints"])
        ]
        return KinematicChain(
            joints=joints,
            base_frame=_pose_from_dict(d.get("base")),
            tool_offset=_pose_from_dict(d.get("tool")),
            home=d.get("home"),
            name=d.get("name", ""),
        )
    except KeyError as exc:
        raise ConfigError(f"chain definition missing field {exc.args[0]!r}") from exc


def chain_to_dict(chain: KinematicChain) -> dict:
    return {
        "name": chain.name,
        "base": _pose_to_dict(chain.base_frame),
        "joints": [
            {
                "name": j.name,
                "axis": [float(v) for v in j.axis],
                "offset": _pose_to_dict(j.origin_offset),
                "limits": [j.limits[0], j.limits[1]],
            }
            for j in chain.joints
        ],
        "tool": _pose_to_dict(chain.tool_offset),
        "home": [float(v) for v in chain.home],
    }


def load_chain(path) -> KinematicChain:
    with open(path) as fh:
        return chain_from_dict(yaml.safe_load(fh))


def save_chain(chain: KinematicChain, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(chain_to_dict(chain), fh, sort_keys=False)


def preset_chain(name: str) -> KinematicChain:
    """Load one of the built-in chains (``arm_a`` or ``arm_b``)."""
    if name not in PRESETS:
        raise ConfigError(f"unknown chain preset {name!r}; choose from {PRESETS}")
    text = resources.files("crossembody.presets").joinpath(f"{name}.yaml").read_text()
    return chain_from_dict(yaml.safe_load(text))


def resolve_chain(spec) -> KinematicChain:
    """Accept a preset name, a path to a chain file, or an already-built chain."""
    if isinstance(spec, KinematicChain):
        return spec
    if isinstance(spec, dict):
        return chain_from_dict(spec)
    if spec in PRESETS:
        return preset_chain(spec)
    return load_chain(spec)


# ---------------------------------------------------------------------------
# Forward kinematics and Jacobian
# ---------------------------------------------------------------------------


def _frames(chain: KinematicChain, q):
    """World rotation/position of the tool plus joint origins and axes."""
    rot, pos = chain._base
    origins = np.empty((N_JOINTS, 3))
    axes = np.empty((N_JOINTS, 3))
    for i in range(N_JOINTS):
        off_r, off_p = chain._offsets[i]
        pos = pos + rot @ off_p
        rot = rot @ off_r
        axis = chain._axes[i]
        origins[i] = pos
        axes[i] = rot @ axis
        rot = rot @ rotation_about(axis, q[i])
    tool_r, tool_p = chain._tool
    return rot @ tool_r, pos + rot @ tool_p, origins, axes


def forward_kinematics(chain: KinematicChain, q) -> Pose:
    """Tool pose in the world frame for joint vector ``q``."""
    rot, pos, _, _ = _frames(chain, np.asarray(q, dtype=np.float64))
    return Pose.from_matrix(_hom(rot, pos))


def _hom(rot, pos):
    m = np.eye(4)
    m[:3, :3] = rot
    m[:3, 3] = pos
    return m


def _jacobian_from_frames(p_end, origins, axes) -> np.ndarray:
    jac = np.empty((6, N_JOINTS))
    jac[:3] = np.cross(axes, p_end - origins).T
    jac[3:] = axes.T
    return jac


def jacobian(chain: KinematicChain, q) -> np.ndarray:
    """6x6 geometric Jacobian (linear rows first) in the world frame."""
    _, p_end, origins, axes = _frames(chain, np.asarray(q, dtype=np.float64))
    return _jacobian_from_frames(p_end, origins, axes)


def jacobian_fd(chain: KinematicChain, q, eps: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian; angular rows from the relative rotation vector."""
    q = np.asarray(q, dtype=np.float64)
    jac = np.empty((6, N_JOINTS))
    for i in range(N_JOINTS):
        dq = np.zeros(N_JOINTS)
        dq[i] = eps
        r_up, p_up, _, _ = _frames(chain, q + dq)
        r_dn, p_dn, _, _ = _frames(chain, q - dq)
        jac[:3, i] = (p_up - p_dn) / (2 * eps)
        jac[3:, i] = quat_to_rotvec(matrix_to_quat(r_up @ r_dn.T)) / (2 * eps)
    return jac


# ---------------------------------------------------------------------------
# Inverse kinematics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class IkParams:
    pos_tol: float = 1e-3
    rot_tol: float = 1e-2
    max_iterations: int = 200
    damping: float = 0.05
    max_step: float = 0.5
    restarts: int = 0
    restart_seed: int = 0
    # accepted steps halve lambda down to this floor (defaults to ``damping``)
    min_damping: float | None = None


@dataclass(frozen=True, eq=False)
class IkSolution:
    q: np.ndarray
    position_error: float
    orientation_error: float
    iterations: int
    converged: bool


def _pose_error(rot, pos, target_pos, target_quat):
    cur_q = matrix_to_quat(rot)
    e_pos = target_pos - pos
    e_rot = quat_to_rotvec(quat_mul(target_quat, quat_conj(cur_q)))
    return e_pos, e_rot, cur_q


def _dls(chain, target, seed, params):
    tp, tq = target.position, target.orientation
    lam = params.damping
    lam_floor = params.damping if params.min_damping is None else params.min_damping
    q = chain.clamp(seed)
    rot, pos, origins, axes = _frames(chain, q)
    e_pos, e_rot, _ = _pose_error(rot, pos, tp, tq)
    err = math.sqrt(float(e_pos @ e_pos + e_rot @ e_rot))
    iterations = 0
    eye = np.eye(N_JOINTS)
    while True:
        p_err = math.sqrt(float(e_pos @ e_pos))
        r_err = math.sqrt(float(e_rot @ e_rot))
        if p_err <= params.pos_tol and r_err <= params.rot_tol:
            return q, p_err, r_err, iterations, True
        if iterations >= params.max_iterations:
            return q, p_err, r_err, iterations, False
        jac = _jacobian_from_frames(pos, origins, axes)
        e = np.concatenate([e_pos, e_rot])
        dq = np.linalg.solve(jac.T @ jac + (lam * lam) * eye, jac.T @ e)
        step = math.sqrt(float(dq @ dq))
        if step > params.max_step:
            dq *= params.max_step / step
        q_c = np.clip(q + dq, chain.lower, chain.upper)
        frames_c = _frames(chain, q_c)
        e_pos_c, e_rot_c, _ = _pose_error(frames_c[0], frames_c[1], tp, tq)
        err_c = math.sqrt(float(e_pos_c @ e_pos_c + e_rot_c @ e_rot_c))
        iterations += 1
        if err_c < err:
            q, err, e_pos, e_rot = q_c, err_c, e_pos_c, e_rot_c
            rot, pos, origins, axes = frames_c
            lam = max(lam_floor, 0.5 * lam)
        else:
            lam *= 2.0
            if lam > 1e8:
                # the step has shrunk to nothing; further iterations cannot help
                p_err = math.sqrt(float(e_pos @ e_pos))
                r_err = math.sqrt(float(e_rot @ e_rot))
                return q, p_err, r_err, iterations, False


def solve_ik(chain: KinematicChain, target: Pose, seed, params: IkParams = IkParams()) -> IkSolution:
    """Damped least-squares IK with per-step joint-limit clamping.

    Iterates ``q <- clamp(q + (J^T J + lambda^2 I)^-1 J^T e)`` where ``e``
    stacks the position error and the axis-angle of
    ``target * current^-1``. Rejected steps double lambda; accepted steps
    halve it back towards ``params.damping``.

    Raises:
        SeedOutOfLimits: ``seed`` violates the chain's joint limits.
        NotConverged: tolerance not reached; ``exc.solution`` is the best iterate.
    """
    seed = np.asarray(seed, dtype=np.float64).reshape(N_JOINTS)
    if not chain.within_limits(seed):
        raise SeedOutOfLimits(f"seed {np.array2string(seed, precision=3)} outside joint limits")
    best = None
    seeds = [seed]
    if params.restarts:
        rng = np.random.default_rng(params.restart_seed)
        seeds += [chain.sample_configuration(rng) for _ in range(params.restarts)]
    total_iterations = 0
    for s in seeds:
        q, p_err, r_err, its, ok = _dls(chain, target, s, params)
        total_iterations += its
        sol = IkSolution(q, p_err, r_err, total_iterations, ok)
        if ok:
            return sol
        if best is None or p_err + r_err < best.position_error + best.orientation_error:
            best = sol
    best = replace(best, iterations=total_iterations)
    raise NotConverged(
        f"IK did not converge: position error {best.position_error:.3g} m, "
        f"orientation error {best.orientation_error:.3g} rad",
        best,
    )


def solve_ik_or_best(chain, target, seed, params=IkParams()) -> IkSolution:
    """Like :func:`solve_ik` but returns the flagged best iterate instead of raising."""
    try:
        return solve_ik(chain, target, seed, params)
    except NotConverged as exc:
        return exc.solution


def pose_residual(chain: KinematicChain, q, target: Pose) -> tuple[float, float]:
    """Position (m) and orientation (rad) mismatch between FK(q) and ``target``."""
    pose = forward_kinematics(chain, q)
    return (
        float(np.linalg.norm(pose.position - target.position)),
        geodesic_distance(pose.orientation, target.orientation),
    )


def solve_trajectory(chain: KinematicChain, targets: Sequence[Pose], seed, params: IkParams = IkParams(),
                     warm_start: bool = True) -> list[IkSolution]:
    """Solve a sequence of targets, seeding each step with the previous solution.

    Failed steps are returned flagged (``converged=False``); warm starting
    continues from the last converged joint vector.
    """
    seed = chain.clamp(seed)
    out = []
    prev = seed
    for target in targets:
        sol = solve_ik_or_best(chain, target, prev if warm_start else seed, params)
        out.append(sol)
        if sol.converged and warm_start:
            prev = sol.q
    return out
