import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossembody.actionspace import (
    HUMAN,
    HumanHandState,
    RobotJointState,
    block_mask,
    eef_pos_slice,
    fingertips_slice,
    human_dims,
    joints_slice,
    robot_dims,
    robot_joint_dims,
    thumb_reference,
)
from crossembody.dataset import (
    Demonstration,
    ReachTaskConfig,
    augment_complementary,
    augment_with_report,
    chunk_samples,
    compute_norm_stats,
    expected_sample_count,
    generate_synthetic_demos,
    goal_pose,
    min_jerk,
    read_dataset,
    read_manifest,
    write_dataset,
    write_manifest,
)
from crossembody.dataset.demos import demo_from_states
from crossembody.dataset.io import MAGIC
from crossembody.errors import BadMagic, ConfigError, TaskUnreachable, TruncatedFile, VersionMismatch
from crossembody.geometry import apply_transform, geodesic_distance
from crossembody.kinematics import forward_kinematics

SHORT = ReachTaskConfig(move_steps=10, hold_steps=3)


@pytest.fixture(scope="module")
def demos(tight_cfg):
    return generate_synthetic_demos(SHORT, 3, 7, tight_cfg)


@pytest.fixture(scope="module")
def augmented(demos, tight_cfg):
    return [augment_complementary(d, tight_cfg) for d in demos]


def toy_demo(length, values=None, mask=None):
    states = np.zeros((length + 1, 76)) if values is None else values
    m = np.ones(76, dtype=bool) if mask is None else mask
    return demo_from_states("toy", "robot", 0, [0.0], states, m)


class TestSynthetic:
    def test_counts_and_ids(self, demos):
        assert [d.embodiment for d in demos] == ["robot"] * 3 + ["human"] * 3
        assert len({d.id for d in demos}) == 6
        assert all(len(d) == SHORT.length for d in demos)

    def test_final_pose_reaches_goal(self, demos, tight_cfg):
        chain = tight_cfg.chains["right"]
        for d in demos[:3]:
            q = d.labels[-1, joints_slice("right")]
            fk = forward_kinematics(chain, q)
            target = goal_pose(SHORT, tight_cfg, d.scene)
            assert np.linalg.norm(fk.position - d.scene[:3]) < 1e-3
            assert geodesic_distance(fk.orientation, target.orientation) < 1e-3

    def test_goal_inside_box(self, demos, tight_cfg):
        home = tight_cfg.initial_eef.right.position
        for d in demos:
            rel = d.scene[:3] - home
            assert np.all(rel >= np.array(SHORT.target_low) - 1e-12)
            assert np.all(rel <= np.array(SHORT.target_high) + 1e-12)
            assert np.linalg.norm(d.scene[3:]) <= SHORT.max_tilt

    def test_native_masks(self, demos):
        assert np.array_equal(demos[0].label_mask[0], block_mask("robot", ("right",)))
        assert np.array_equal(demos[-1].label_mask[0], block_mask("human", ("right",)))

    def test_deterministic(self, demos, tight_cfg, tmp_path):
        again = generate_synthetic_demos(SHORT, 3, 7, tight_cfg)
        assert all(a.equals(b) for a, b in zip(demos, again))
        write_dataset(demos, tmp_path / "a.bin")
        write_dataset(again, tmp_path / "b.bin")
        assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()

    def test_seed_matters(self, demos, tight_cfg):
        other = generate_synthetic_demos(SHORT, 1, 8, tight_cfg, embodiments=("robot",))
        assert not np.array_equal(other[0].scene, demos[0].scene)

    def test_zero_demos(self, tight_cfg):
        assert generate_synthetic_demos(SHORT, 0, 0, tight_cfg) == []

    def test_unreachable(self, tight_cfg):
        far = ReachTaskConfig(move_steps=5, hold_steps=0, target_low=(2.0, 2.0, 2.0), target_high=(2.5, 2.5, 2.5))
        with pytest.raises(TaskUnreachable):
            generate_synthetic_demos(far, 1, 0, tight_cfg)

    def test_bad_task(self):
        with pytest.raises(ConfigError):
            ReachTaskConfig(side="middle")
        with pytest.raises(ConfigError):
            ReachTaskConfig(target_low=(1, 0, 0), target_high=(0, 0, 0))

    def test_min_jerk_endpoints(self):
        s = min_jerk(10)
        assert s[0] == 0.0 and s[-1] == 1.0
        assert np.all(np.diff(s) >= 0)


class TestAugment:
    def test_robot_gains_human_dims(self, augmented):
        d = augmented[0]
        assert np.all(d.label_mask[:, human_dims("right")])
        assert not d.label_mask[:, human_dims("left")].any()

    def test_human_thumb_matches_mapped_eef(self, augmented, tight_cfg):
        d = augmented[0]
        for t in range(len(d)):
            h = HumanHandState.from_vector(d.labels[t, HUMAN])
            ref = thumb_reference(h, "right", tight_cfg.thumb_offset)
            q = d.labels[t, joints_slice("right")]
            expected = apply_transform(tight_cfg.r_m, forward_kinematics(tight_cfg.chains["right"], q))
            np.testing.assert_allclose(ref.position, expected.position, atol=1e-12)

    def test_human_gains_robot_dims(self, augmented):
        d = augmented[-1]
        assert np.all(d.label_mask[:, robot_dims("right")])
        assert not d.label_mask[:, robot_dims("left")].any()

    def test_native_values_untouched(self, demos, augmented):
        for raw, aug in zip(demos, augmented):
            native = raw.label_mask
            assert np.array_equal(aug.labels[native], raw.labels[native])
            assert np.array_equal(aug.proprio, raw.proprio)
            assert np.array_equal(aug.label_mask[native], raw.label_mask[native])

    def test_idempotent(self, augmented, tight_cfg):
        for d in augmented:
            assert augment_complementary(d, tight_cfg).equals(d)

    def test_retargeted_joints_are_sound(self, augmented, tight_cfg):
        chain = tight_cfg.chains["right"]
        d = augmented[-1]
        for t in range(len(d)):
            fk = forward_kinematics(chain, d.labels[t, joints_slice("right")])
            assert np.linalg.norm(fk.position - d.labels[t, eef_pos_slice("right")]) <= tight_cfg.ik.pos_tol + 1e-12

    def test_unreachable_step_masked(self, demos, tight_cfg):
        d = demos[-1].copy()
        # push the thumb of one step 5 m away: IK fails there and nowhere else
        d.labels[4, fingertips_slice("right")] += np.tile([5.0, 0.0, 0.0], 5)
        aug, report = augment_with_report(d, tight_cfg)
        assert (5, "right") in report.failures()
        joints = robot_joint_dims("right")
        assert not aug.label_mask[4, joints].any()
        assert aug.label_mask[3, joints].all() and aug.label_mask[4, robot_dims("right") & ~joints].all()


class TestChunks:
    def test_hand_count(self):
        samples = chunk_samples(toy_demo(10), 4, 1)
        assert len(samples) == 10
        assert [int(s.target.pad.sum()) for s in samples[-3:]] == [1, 2, 3]
        assert not samples[6].target.pad.any()

    def test_horizon_one(self):
        samples = chunk_samples(toy_demo(6), 1, 1)
        assert len(samples) == 6 and not any(s.target.pad.any() for s in samples)

    def test_stride_equal_length(self):
        assert len(chunk_samples(toy_demo(7), 3, 7)) == 1

    def test_padding_repeats_last_row(self):
        values = np.arange(6 * 76, dtype=float).reshape(6, 76)
        s = chunk_samples(toy_demo(5, values), 4, 1)[-1]
        assert np.array_equal(s.target.values[0], values[5])
        assert np.array_equal(s.target.values[3], values[5])

    def test_rows_follow_labels(self):
        values = np.arange(9 * 76, dtype=float).reshape(9, 76)
        d = toy_demo(8, values)
        s = chunk_samples(d, 3, 2)[1]
        assert np.array_equal(s.proprio, d.proprio[2])
        assert np.array_equal(s.target.values, d.labels[2:5])

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 40), st.integers(1, 12), st.integers(1, 8))
    def test_count_formula(self, length, horizon, stride):
        assert len(chunk_samples(toy_demo(length), horizon, stride)) == expected_sample_count(length, stride)

    def test_target_mask_is_label_mask(self, augmented):
        for s in chunk_samples(augmented[-1], 4, 1):
            assert np.array_equal(s.target.mask[0], augmented[-1].label_mask[0])


class TestNormStats:
    def test_constant_dim(self):
        values = np.full((5, 76), 2.5)
        stats = compute_norm_stats([toy_demo(4, values)])
        assert stats.mean[0] == 2.5 and stats.std[0] == 1e-6

    def test_population_std(self):
        values = np.zeros((3, 76))
        values[1, 0], values[2, 0] = -1.0, 1.0
        stats = compute_norm_stats([toy_demo(2, values)])
        assert stats.mean[0] == 0.0 and stats.std[0] == 1.0

    def test_fully_masked_dim(self):
        mask = np.ones(76, dtype=bool)
        mask[5] = False
        values = np.full((4, 76), 3.0)
        stats = compute_norm_stats([toy_demo(3, values, mask)])
        assert stats.mean[5] == 0.0 and stats.std[5] == 1.0

    def test_masked_values_ignored(self):
        mask = np.zeros(76, dtype=bool)
        mask[0] = True
        a = toy_demo(3, np.random.default_rng(0).standard_normal((4, 76)), mask)
        b = a.copy()
        b.labels[:, 1:] = 1e6
        sa, sb = compute_norm_stats([a]), compute_norm_stats([b])
        assert np.array_equal(sa.mean, sb.mean) and np.array_equal(sa.std, sb.std)


class TestFiles:
    def test_round_trip(self, augmented, tmp_path):
        path = tmp_path / "d.bin"
        write_dataset(augmented, path, 16)
        back = read_dataset(path)
        assert len(back) == len(augmented)
        assert all(a.equals(b) for a, b in zip(augmented, back))

    def test_bad_magic(self, augmented, tmp_path):
        path = tmp_path / "d.bin"
        write_dataset(augmented, path)
        data = bytearray(path.read_bytes())
        data[0:4] = b"XXXX"
        path.write_bytes(bytes(data))
        with pytest.raises(BadMagic):
            read_dataset(path)

    def test_future_version(self, augmented, tmp_path):
        path = tmp_path / "d.bin"
        write_dataset(augmented, path)
        path.write_bytes(path.read_bytes().replace(b"version=1\n", b"version=2\n", 1))
        with pytest.raises(VersionMismatch):
            read_dataset(path)

    @pytest.mark.parametrize("cut", [len(MAGIC) + 3, 400, -1])
    def test_truncated(self, augmented, tmp_path, cut):
        path = tmp_path / "d.bin"
        write_dataset(augmented, path)
        path.write_bytes(path.read_bytes()[:cut])
        with pytest.raises(TruncatedFile):
            read_dataset(path)

    def test_trailing_bytes(self, augmented, tmp_path):
        path = tmp_path / "d.bin"
        write_dataset(augmented, path)
        path.write_bytes(path.read_bytes() + b"\0")
        with pytest.raises(TruncatedFile):
            read_dataset(path)

    def test_empty_collection(self, tmp_path):
        write_dataset([], tmp_path / "e.bin")
        assert read_dataset(tmp_path / "e.bin") == []

    def test_manifest_counts(self, augmented, tmp_path):
        write_manifest(augmented, tmp_path / "m.tsv", {0: "reach_right"})
        rows = read_manifest(tmp_path / "m.tsv")
        assert [r["id"] for r in rows] == [d.id for d in augmented]
        assert sum(int(r["steps"]) for r in rows) == sum(len(d) for d in augmented)
        assert {r["task"] for r in rows} == {"reach_right"}


def test_demonstration_validates_shapes():
    with pytest.raises(ValueError):
        Demonstration("x", "robot", 0, [0.0], np.zeros((3, 76)), np.ones((3, 76)), np.zeros((2, 76)),
                      np.ones((2, 76)))
    with pytest.raises(ValueError):
        Demonstration("x", "alien", 0, [0.0], np.zeros((1, 76)), np.ones((1, 76)), np.zeros((1, 76)),
                      np.ones((1, 76)))


def test_robot_state_layout_in_demo(demos, tight_cfg):
    d = demos[0]
    r = RobotJointState.from_vector(d.proprio[0, 48:62])
    np.testing.assert_array_equal(r.right_q, tight_cfg.home_q("right"))
