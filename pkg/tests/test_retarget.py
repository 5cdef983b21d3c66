import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossembody.actionspace import SIDES, EefState, HumanHandState, thumb_reference
from crossembody.errors import ConfigError, EmptyTrajectory
from crossembody.geometry import FrameTransform, Pose, apply_transform, quat_mul, quat_to_matrix, rotvec_to_quat
from crossembody.kinematics import forward_kinematics, pose_residual
from crossembody.retarget import (
    FingerParams,
    RetargetConfig,
    estimate_gripper,
    human_to_robot,
    human_to_robot_eef,
    human_to_robot_joints,
    retarget_config_from_dict,
    robot_to_human,
    robot_to_human_thumb,
    synthesize_fingers,
)

from conftest import random_quat

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])


def thumb_hand(displacements, side="right"):
    """Hand states whose thumb tip moves by the given displacements (identity wrists)."""
    out = []
    for d in displacements:
        h = HumanHandState()
        tips = np.zeros((5, 3))
        tips[0] = d
        h.set_side(side, Pose((0.0, 0.0, 0.0)), tips)
        out.append(h)
    return out


def smooth_eef_path(cfg, rng, steps=25, reach=0.08, turn=0.4):
    drift = {s: (rng.uniform(-reach, reach, 3), rng.uniform(-turn, turn, 3)) for s in SIDES}
    traj = []
    for k in range(steps):
        a = 0.5 - 0.5 * np.cos(np.pi * k / (steps - 1))
        poses = []
        for s in SIDES:
            home = cfg.initial_eef.pose(s)
            dp, dr = drift[s]
            poses.append(Pose(home.position + a * dp, quat_mul(rotvec_to_quat(a * dr), home.orientation)))
        traj.append(EefState(*poses))
    return traj


class TestHumanToRobotEef:
    def test_constant_trajectory(self, retarget_cfg):
        out = human_to_robot_eef(thumb_hand([(0.1, 0.2, 0.3)] * 5), retarget_cfg)
        for e in out:
            for s in SIDES:
                assert e.pose(s).allclose(retarget_cfg.initial_eef.pose(s), atol=1e-15)

    def test_step_zero_is_initial(self, retarget_cfg, rng):
        out = human_to_robot_eef(thumb_hand(rng.standard_normal((4, 3))), retarget_cfg)
        assert out[0].right.position.tobytes() == retarget_cfg.initial_eef.right.position.tobytes()

    def test_identity_displacement(self):
        cfg = RetargetConfig(r_h=FrameTransform.identity())
        out = human_to_robot_eef(thumb_hand([(0, 0, 0), (0.1, 0, 0)]), cfg)
        np.testing.assert_allclose(out[1].right.position - out[0].right.position, [0.1, 0, 0], atol=1e-15)

    def test_rotated_displacement(self):
        cfg = RetargetConfig(r_h=FrameTransform.from_rotation(RZ90))
        out = human_to_robot_eef(thumb_hand([(0, 0, 0), (0.1, 0, 0)]), cfg)
        np.testing.assert_allclose(out[1].right.position - out[0].right.position, [0, 0.1, 0], atol=1e-15)

    def test_inactive_side_holds(self, retarget_cfg, rng):
        hands = robot_to_human(smooth_eef_path(retarget_cfg, rng), retarget_cfg)
        out = human_to_robot_eef(hands, retarget_cfg, sides=("right",))
        for e in out:
            assert e.left.allclose(retarget_cfg.initial_eef.left, atol=1e-12)

    def test_empty(self, retarget_cfg):
        with pytest.raises(EmptyTrajectory):
            human_to_robot_eef([], retarget_cfg)

    def test_equivariance(self, retarget_cfg, rng):
        hands = robot_to_human(smooth_eef_path(retarget_cfg, rng), retarget_cfg)
        g = quat_to_matrix(random_quat(rng))
        rotated = []
        for h in hands:
            r = HumanHandState()
            for s in SIDES:
                w = h.wrist_pose(s)
                r.set_side(s, Pose(g @ w.position, quat_mul(rotvec_to_quat(np.zeros(3)), w.orientation)),
                           h.fingertips(s) @ g.T)
                rw = Pose.from_matrix(np.block([[g @ w.rotation, (g @ w.position)[:, None]], [np.zeros((1, 3)), 1]]))
                r.set_side(s, rw, h.fingertips(s) @ g.T)
            rotated.append(r)
        cfg_g = RetargetConfig(r_h=FrameTransform.from_rotation(retarget_cfg.r_h.rotation @ g.T),
                               r_m=retarget_cfg.r_m)
        base = human_to_robot_eef(hands, retarget_cfg)
        conj = human_to_robot_eef(rotated, cfg_g)
        for a, b in zip(base, conj):
            for s in SIDES:
                np.testing.assert_allclose(b.pose(s).position, a.pose(s).position, atol=1e-12)
                np.testing.assert_allclose(b.pose(s).rotation, a.pose(s).rotation, atol=1e-9)


class TestHumanToRobotJoints:
    def test_home_path(self, retarget_cfg):
        eef = [retarget_cfg.initial_eef] * 4
        joints, report = human_to_robot_joints(eef, thumb_hand([(0, 0, 0)] * 4), retarget_cfg)
        for j in joints:
            for s in SIDES:
                np.testing.assert_allclose(j.q(s), retarget_cfg.home_q(s), atol=1e-12)
        assert all(report.converged)

    def test_smooth_path_converges(self, retarget_cfg, rng):
        traj = smooth_eef_path(retarget_cfg, rng)
        hands = robot_to_human(traj, retarget_cfg)
        eef, joints, report = human_to_robot(hands, retarget_cfg)
        assert all(report.converged) and len(report) == 2 * len(traj)
        for e, j in zip(eef, joints):
            for s in SIDES:
                pos, rot = pose_residual(retarget_cfg.chains[s], j.q(s), e.pose(s))
                assert pos < 1e-3 and rot < 1e-2

    def test_unreachable_step_isolated(self, retarget_cfg):
        home = retarget_cfg.initial_eef
        far = EefState(home.left, Pose((5.0, -0.25, 0.0), home.right.orientation))
        eef = [home, far, home]
        joints, report = human_to_robot_joints(eef, thumb_hand([(0, 0, 0)] * 3), retarget_cfg)
        assert report.failures() == [(1, "right")]
        # the failed step holds the last converged joints
        np.testing.assert_array_equal(joints[1].right_q, joints[0].right_q)
        assert report.converged[2 * 0] and report.converged[-1]

    def test_report_csv(self, retarget_cfg):
        _, report = human_to_robot_joints([retarget_cfg.initial_eef] * 2, thumb_hand([(0, 0, 0)] * 2), retarget_cfg)
        lines = report.to_csv().splitlines()
        assert lines[0] == "step,side,converged,pos_residual,rot_residual,gripper"
        assert len(lines) == 1 + 4


class TestGripper:
    def hand_with_gap(self, d):
        h = HumanHandState()
        tips = np.zeros((5, 3))
        tips[1] = (d, 0, 0)
        h.set_side("right", Pose(), tips)
        return h

    @pytest.mark.parametrize("d,expected", [(0.048, 0.0), (0.08, 1.0), (0.064, 0.5), (0.01, 0.0), (0.2, 1.0)])
    def test_calibration(self, retarget_cfg, d, expected):
        assert estimate_gripper(self.hand_with_gap(d), "right", retarget_cfg) == pytest.approx(expected, abs=1e-12)

    @given(st.floats(0.0, 0.15), st.floats(0.0, 0.15))
    def test_monotone(self, a, b):
        cfg = RetargetConfig()
        lo, hi = sorted((a, b))
        assert estimate_gripper(self.hand_with_gap(lo), "right", cfg) <= estimate_gripper(self.hand_with_gap(hi), "right", cfg)

    def test_rigid_motion_invariance(self, retarget_cfg, rng):
        thumb = Pose(rng.standard_normal(3), random_quat(rng))
        tips, wrist = synthesize_fingers(thumb, 0.3, "right", retarget_cfg)
        g = quat_to_matrix(random_quat(rng))
        moved = HumanHandState()
        moved.set_side("right", wrist, tips @ g.T + rng.standard_normal(3))
        h = HumanHandState()
        h.set_side("right", wrist, tips)
        assert estimate_gripper(moved, "right", retarget_cfg) == pytest.approx(
            estimate_gripper(h, "right", retarget_cfg), abs=1e-12)

    @settings(max_examples=50)
    @given(st.floats(0.0, 1.0), st.sampled_from(SIDES))
    def test_synthesis_then_estimate(self, g, side):
        cfg = RetargetConfig()
        tips, wrist = synthesize_fingers(Pose((0.1, 0.2, 0.3), (0.5, 0.5, 0.5, 0.5)), g, side, cfg)
        h = HumanHandState()
        h.set_side(side, wrist, tips)
        assert estimate_gripper(h, side, cfg) == pytest.approx(g, abs=1e-6)

    def test_calibration_order(self):
        with pytest.raises(ConfigError):
            RetargetConfig(gripper_calibration=(0.08, 0.05))


class TestRobotToHuman:
    def test_identity_thumb(self, rng):
        cfg = RetargetConfig(r_m=FrameTransform.identity())
        traj = smooth_eef_path(cfg, rng, steps=3)
        for (l, r), e in zip(robot_to_human_thumb(traj, cfg), traj):
            assert l.allclose(e.left, atol=1e-12) and r.allclose(e.right, atol=1e-12)

    def test_translation(self, rng):
        cfg = RetargetConfig(r_m=FrameTransform(np.eye(3), (0, 0, 0.1)))
        traj = smooth_eef_path(cfg, rng, steps=3)
        for (_, r), e in zip(robot_to_human_thumb(traj, cfg), traj):
            np.testing.assert_allclose(r.position, e.right.position + [0, 0, 0.1], atol=1e-15)

    def test_quarter_turn(self):
        cfg = RetargetConfig(r_m=FrameTransform.from_rotation(RZ90))
        (_, r), = robot_to_human_thumb([EefState(Pose(), Pose((1, 0, 0)))], cfg)
        np.testing.assert_allclose(r.position, [0, 1, 0], atol=1e-15)

    def test_empty(self, retarget_cfg):
        with pytest.raises(EmptyTrajectory):
            robot_to_human_thumb([], retarget_cfg)

    def test_constant_pose_recovers_thumb(self):
        cfg = RetargetConfig(r_m=FrameTransform.identity())
        hands = robot_to_human([cfg.initial_eef] * 3, cfg)
        for h in hands:
            for s in SIDES:
                ref = thumb_reference(h, s, cfg.thumb_offset)
                np.testing.assert_allclose(ref.position, cfg.initial_eef.pose(s).position, atol=1e-12)

    def test_joint_input_goes_through_fk(self, retarget_cfg):
        hands = robot_to_human([retarget_cfg.home_robot_state()], retarget_cfg)
        ref = thumb_reference(hands[0], "right", retarget_cfg.thumb_offset)
        fk = forward_kinematics(retarget_cfg.chains["right"], retarget_cfg.home_q("right"))
        expected = apply_transform(retarget_cfg.r_m, fk)
        np.testing.assert_allclose(ref.position, expected.position, atol=1e-12)
        assert hands[0].to_vector().shape == (48,)


class TestFingers:
    def test_endpoints(self, retarget_cfg):
        fp = retarget_cfg.finger_params
        for g, alpha in ((0.0, fp.dominant_factors[0]), (1.0, fp.dominant_factors[1])):
            tips, _ = synthesize_fingers(Pose(), g, "right", retarget_cfg)
            assert np.linalg.norm(tips[1] - tips[0]) == pytest.approx(fp.base_lengths[0] * alpha, abs=1e-15)

    def test_open_synergistic_fingers(self, retarget_cfg):
        fp = retarget_cfg.finger_params
        tips, _ = synthesize_fingers(Pose(), 1.0, "right", retarget_cfg)
        for f in range(1, 4):
            dist = np.linalg.norm(tips[f + 1] - tips[0])
            assert dist == pytest.approx(fp.base_lengths[f] * fp.synergistic_factors[1], abs=1e-15)

    def test_hand_computed_index(self):
        fp = FingerParams(directions=((0, 1, 0), (1, 0, 0), (1, 0, 0), (1, 0, 0)),
                          base_lengths=(0.08, 0.085, 0.08, 0.065), dominant_factors=(0.5, 1.0))
        cfg = RetargetConfig(finger_params=fp, thumb_offset=(0, 0, 0))
        tips, _ = synthesize_fingers(Pose((1, 2, 3)), 0.5, "right", cfg)
        np.testing.assert_allclose(tips[1], [1, 2.06, 3], atol=1e-15)

    def test_left_mirrors_right(self, retarget_cfg):
        r, _ = synthesize_fingers(Pose(), 0.4, "right", retarget_cfg)
        l, _ = synthesize_fingers(Pose(), 0.4, "left", retarget_cfg)
        np.testing.assert_allclose(l[1:] - l[0], (r[1:] - r[0]) * [1, -1, 1], atol=1e-15)

    def test_thumb_reference_recovers_input(self, retarget_cfg, rng):
        thumb = Pose(rng.standard_normal(3), random_quat(rng))
        tips, wrist = synthesize_fingers(thumb, 0.7, "left", retarget_cfg)
        h = HumanHandState()
        h.set_side("left", wrist, tips)
        assert thumb_reference(h, "left", retarget_cfg.thumb_offset).allclose(thumb, atol=1e-12)

    def test_bad_finger_params(self):
        with pytest.raises(ConfigError):
            FingerParams(base_lengths=(0.1, -0.1, 0.1, 0.1))


def test_round_trip_random_trajectories(retarget_cfg, rng):
    for _ in range(20):
        traj = smooth_eef_path(retarget_cfg, rng)
        grips = [tuple(rng.uniform(0, 1, 2))] * len(traj)
        back = human_to_robot_eef(robot_to_human(traj, retarget_cfg, grips), retarget_cfg)
        for b, e in zip(back, traj):
            for s in SIDES:
                assert np.linalg.norm(b.pose(s).position - e.pose(s).position) < 1e-6
                np.testing.assert_allclose(b.pose(s).rotation, e.pose(s).rotation, atol=1e-9)


def test_config_from_dict():
    cfg = retarget_config_from_dict({
        "r_h": [0, -1, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0],
        "r_m_inverse_of_r_h": True,
        "chains": {"left": "arm_b", "right": {"preset": "arm_a", "base": {"position": [0, -0.3, 0]}}},
        "gripper_calibration": [0.04, 0.09],
    })
    np.testing.assert_allclose(cfg.r_m.linear, RZ90.T)
    assert cfg.chains["left"].name == "arm_b"
    np.testing.assert_allclose(cfg.chains["right"].base_frame.position, [0, -0.3, 0])
    with pytest.raises(ConfigError, match="retarget.bogus"):
        retarget_config_from_dict({"bogus": 1})
