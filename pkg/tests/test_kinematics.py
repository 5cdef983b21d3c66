import math
import time

import numpy as np
import pytest

from crossembody.errors import ConfigError, NotConverged, SeedOutOfLimits
from crossembody.geometry import Pose, geodesic_distance, quat_to_matrix
from crossembody.kinematics import (
    PRESETS,
    IkParams,
    JointSpec,
    KinematicChain,
    chain_to_dict,
    forward_kinematics,
    jacobian,
    jacobian_fd,
    load_chain,
    pose_residual,
    preset_chain,
    resolve_chain,
    save_chain,
    solve_ik,
    solve_ik_or_best,
    solve_trajectory,
)

from conftest import random_quat


def planar_chain(first_axis=(0, 0, 1), tool=(1.0, 0.0, 0.0)):
    """Six joints, all at the origin; only the tool offset gives the arm length."""
    joints = [JointSpec(first_axis)] + [JointSpec((1, 0, 0)) for _ in range(5)]
    return KinematicChain(joints, tool_offset=Pose(tool))


def homogeneous(pose: Pose) -> np.ndarray:
    m = np.eye(4)
    m[:3, :3] = quat_to_matrix(pose.orientation)
    m[:3, 3] = pose.position
    return m


def naive_fk(chain, q) -> np.ndarray:
    """Independent oracle: product of 4x4 matrices, rotations via Rodrigues in homogeneous form."""
    m = homogeneous(chain.base_frame)
    for joint, angle in zip(chain.joints, q):
        m = m @ homogeneous(joint.origin_offset)
        k = np.asarray(joint.axis)
        kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
        r = np.eye(4)
        r[:3, :3] = np.eye(3) + math.sin(angle) * kx + (1 - math.cos(angle)) * kx @ kx
        m = m @ r
    return m @ homogeneous(chain.tool_offset)


@pytest.fixture(params=PRESETS)
def chain(request):
    return preset_chain(request.param)


class TestChain:
    def test_presets_differ(self):
        a, b = (preset_chain(n) for n in PRESETS)
        assert not np.allclose(forward_kinematics(a, a.home).position, forward_kinematics(b, a.home).position)

    def test_needs_six_joints(self):
        with pytest.raises(ValueError):
            KinematicChain([JointSpec((0, 0, 1))] * 5)

    def test_axis_must_be_unit(self):
        with pytest.raises(ValueError):
            JointSpec((0, 0, 2))

    def test_limits_ordered(self):
        with pytest.raises(ValueError):
            JointSpec((0, 0, 1), limits=(1.0, -1.0))

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset_chain("arm_z")

    def test_file_round_trip(self, chain, tmp_path, rng):
        path = tmp_path / "chain.yaml"
        save_chain(chain, path)
        back = load_chain(path)
        assert chain_to_dict(back) == chain_to_dict(chain)
        q = chain.sample_configuration(rng)
        np.testing.assert_array_equal(forward_kinematics(back, q).position, forward_kinematics(chain, q).position)
        assert resolve_chain(str(path)).name == chain.name

    def test_missing_field(self):
        with pytest.raises(ConfigError, match="joints"):
            resolve_chain({"name": "x"})


class TestForwardKinematics:
    def test_zero_configuration(self):
        c = planar_chain()
        pose = forward_kinematics(c, np.zeros(6))
        np.testing.assert_allclose(pose.position, [1, 0, 0])
        np.testing.assert_allclose(pose.orientation, [1, 0, 0, 0])

    def test_quarter_turn_single_joint(self):
        pose = forward_kinematics(planar_chain(), [math.pi / 2, 0, 0, 0, 0, 0])
        np.testing.assert_allclose(pose.position, [0, 1, 0], atol=1e-15)

    def test_matches_matrix_oracle(self, chain, rng):
        for _ in range(50):
            q = chain.sample_configuration(rng)
            m = naive_fk(chain, q)
            pose = forward_kinematics(chain, q)
            np.testing.assert_allclose(pose.position, m[:3, 3], atol=1e-12)
            np.testing.assert_allclose(pose.rotation, m[:3, :3], atol=1e-12)

    def test_with_base_offset(self, chain, rng):
        base = Pose((0.1, -0.2, 0.3), (0.9238795325112867, 0, 0, 0.3826834323650898))
        moved = chain.with_base(base)
        q = chain.sample_configuration(rng)
        np.testing.assert_allclose(forward_kinematics(moved, q).position, naive_fk(moved, q)[:3, 3], atol=1e-12)

    def test_deterministic(self, chain, rng):
        q = chain.sample_configuration(rng)
        a, b = forward_kinematics(chain, q), forward_kinematics(chain, q.copy())
        assert a.position.tobytes() == b.position.tobytes()
        assert a.orientation.tobytes() == b.orientation.tobytes()


class TestJacobian:
    def test_single_joint_column(self):
        col = jacobian(planar_chain(), np.zeros(6))[:, 0]
        np.testing.assert_allclose(col, [0, 1, 0, 0, 0, 1], atol=1e-15)

    def test_axis_through_end_effector(self):
        # x-axis joints sit at the origin and the tool lies on the x axis
        jac = jacobian(planar_chain(), np.zeros(6))
        np.testing.assert_allclose(jac[:3, 1:], 0.0, atol=1e-15)

    def test_matches_finite_differences(self, chain, rng):
        for _ in range(50):
            q = chain.sample_configuration(rng)
            assert np.abs(jacobian(chain, q) - jacobian_fd(chain, q)).max() < 1e-5


class TestSolveIk:
    def test_already_solved(self, chain):
        sol = solve_ik(chain, forward_kinematics(chain, chain.home), chain.home)
        assert sol.converged and sol.iterations <= 2
        assert sol.position_error <= 1e-3 and sol.orientation_error <= 1e-2

    def test_reachable_targets(self, chain, rng):
        for _ in range(30):
            q_star = chain.sample_configuration(rng)
            seed = chain.clamp(q_star + rng.normal(0, 0.1, 6))
            target = forward_kinematics(chain, q_star)
            sol = solve_ik(chain, target, seed)
            assert sol.position_error < 1e-3
            pos, rot = pose_residual(chain, sol.q, target)
            assert pos <= 1e-3 + 1e-12 and rot <= 1e-2 + 1e-12
            assert chain.within_limits(sol.q)

    def test_tight_tolerance(self, chain, rng):
        params = IkParams(pos_tol=1e-8, rot_tol=1e-8, min_damping=1e-5)
        q_star = chain.sample_configuration(rng)
        sol = solve_ik(chain, forward_kinematics(chain, q_star), chain.clamp(q_star + 0.05), params)
        assert sol.position_error <= 1e-8

    def test_unreachable(self, chain):
        with pytest.raises(NotConverged) as info:
            solve_ik(chain, Pose((10.0, 0.0, 0.0)), chain.home)
        best = info.value.solution
        assert np.all(np.isfinite(best.q)) and not best.converged
        assert chain.within_limits(best.q)

    def test_or_best_flags_instead_of_raising(self, chain):
        sol = solve_ik_or_best(chain, Pose((10.0, 0.0, 0.0)), chain.home)
        assert not sol.converged

    def test_seed_outside_limits(self, chain):
        with pytest.raises(SeedOutOfLimits):
            solve_ik(chain, Pose(), chain.upper + 0.1)

    def test_deterministic(self, chain, rng):
        target = forward_kinematics(chain, chain.sample_configuration(rng))
        a = solve_ik_or_best(chain, target, chain.home)
        b = solve_ik_or_best(chain, target, chain.home)
        assert a.q.tobytes() == b.q.tobytes() and a.iterations == b.iterations

    def test_soundness_of_reported_success(self, chain, rng):
        params = IkParams()
        for _ in range(40):
            target = forward_kinematics(chain, chain.sample_configuration(rng))
            sol = solve_ik_or_best(chain, target, chain.home, params)
            if sol.converged:
                pos, rot = pose_residual(chain, sol.q, target)
                assert pos <= params.pos_tol and rot <= params.rot_tol + 1e-12


class TestTrajectory:
    def test_warm_start_follows_smooth_path(self, chain):
        start = forward_kinematics(chain, chain.home)
        targets = [Pose(start.position + [0.002 * k, -0.001 * k, 0.001 * k], start.orientation) for k in range(30)]
        sols = solve_trajectory(chain, targets, chain.home)
        assert all(s.converged for s in sols)
        steps = [np.abs(b.q - a.q).max() for a, b in zip(sols, sols[1:])]
        assert max(steps) < 0.1

    def test_unreachable_step_is_isolated(self, chain):
        start = forward_kinematics(chain, chain.home)
        targets = [start, Pose((10.0, 0.0, 0.0)), start]
        sols = solve_trajectory(chain, targets, chain.home)
        assert [s.converged for s in sols] == [True, False, True]


def test_ik_suite_timing_sanity():
    """A small slice of the acceptance workload finishes quickly."""
    chain = preset_chain("arm_a")
    rng = np.random.default_rng(0)
    t0 = time.perf_counter()
    for _ in range(50):
        q = chain.sample_configuration(rng)
        solve_ik_or_best(chain, forward_kinematics(chain, q), chain.clamp(q + rng.normal(0, 0.1, 6)))
    assert time.perf_counter() - t0 < 2.0


@pytest.mark.parametrize("name", ["arm_a", "arm_b"])
def test_reach_sphere_contains_workspace(name, rng):
    chain = preset_chain(name).with_base(Pose([0.1, -0.2, 0.3], random_quat(rng)))
    center, radius = chain.reach_sphere()
    dists = [np.linalg.norm(forward_kinematics(chain, chain.sample_configuration(rng)).position - center)
             for _ in range(500)]
    assert max(dists) <= radius + 1e-12
