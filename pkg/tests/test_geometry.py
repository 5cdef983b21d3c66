import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from crossembody.errors import DegenerateSixD, NotARotation, ZeroQuaternion
from crossembody.geometry import (
    FrameTransform,
    Pose,
    apply_transform,
    geodesic_distance,
    matrix_to_quat,
    matrix_to_sixd,
    quat_from_axis_angle,
    quat_mul,
    quat_normalize,
    quat_to_matrix,
    quat_to_rotvec,
    rotation_about,
    rotvec_to_quat,
    sixd_to_matrix,
)

from conftest import random_quat

RZ90 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])

finite = st.floats(-10, 10, allow_nan=False)
vec3 = st.tuples(finite, finite, finite).map(np.array)
quat_raw = st.tuples(finite, finite, finite, finite).filter(lambda q: np.linalg.norm(q) > 1e-3).map(np.array)


def _rotation(rng):
    return quat_to_matrix(random_quat(rng))


class TestQuaternion:
    def test_normalize_identity(self):
        np.testing.assert_array_equal(quat_normalize([1, 0, 0, 0]), [1, 0, 0, 0])

    def test_normalize_flips_sign(self):
        np.testing.assert_array_equal(quat_normalize([-2, 0, 0, 0]), [1, 0, 0, 0])

    def test_normalize_divides_by_norm(self):
        np.testing.assert_allclose(quat_normalize([1, 1, 1, 1]), [0.5, 0.5, 0.5, 0.5], atol=1e-15)

    @pytest.mark.parametrize("q", [[0, 0, 0, 0], [1e-13, 0, 0, 0]])
    def test_zero_quaternion(self, q):
        with pytest.raises(ZeroQuaternion):
            quat_normalize(q)

    @given(quat_raw)
    def test_normalize_invariants(self, q):
        n = quat_normalize(q)
        assert abs(np.linalg.norm(n) - 1.0) < 1e-9
        assert n[0] >= 0.0

    @given(quat_raw, quat_raw)
    def test_product_is_canonical(self, a, b):
        p = quat_mul(quat_normalize(a), quat_normalize(b))
        assert abs(np.linalg.norm(p) - 1.0) < 1e-9
        assert p[0] >= 0.0

    def test_product_matches_matrix_product(self, rng):
        for _ in range(50):
            a, b = random_quat(rng), random_quat(rng)
            np.testing.assert_allclose(quat_to_matrix(quat_mul(a, b)), quat_to_matrix(a) @ quat_to_matrix(b),
                                       atol=1e-12)

    def test_matrix_round_trip(self, rng):
        for _ in range(100):
            q = random_quat(rng)
            np.testing.assert_allclose(matrix_to_quat(quat_to_matrix(q)), q, atol=1e-12)

    def test_rotvec_round_trip(self, rng):
        for _ in range(100):
            r = rng.standard_normal(3)
            r *= rng.uniform(0, math.pi - 1e-3) / np.linalg.norm(r)
            np.testing.assert_allclose(quat_to_rotvec(rotvec_to_quat(r)), r, atol=1e-10)

    def test_rodrigues_agrees_with_quaternion(self, rng):
        axis = rng.standard_normal(3)
        axis /= np.linalg.norm(axis)
        np.testing.assert_allclose(rotation_about(axis, 0.7), quat_to_matrix(quat_from_axis_angle(axis, 0.7)),
                                   atol=1e-14)


class TestSixD:
    def test_identity_columns(self):
        np.testing.assert_allclose(sixd_to_matrix([1, 0, 0, 0, 1, 0]), np.eye(3))

    def test_scale_invariant(self):
        np.testing.assert_allclose(sixd_to_matrix([2, 0, 0, 0, 3, 0]), np.eye(3))

    def test_gram_schmidt_by_hand(self):
        s = 1 / math.sqrt(2)
        expected = np.array([[s, -s, 0], [s, s, 0], [0, 0, 1]])
        np.testing.assert_allclose(sixd_to_matrix([1, 1, 0, 0, 1, 0]), expected, atol=1e-15)

    def test_encode_identity(self):
        np.testing.assert_array_equal(matrix_to_sixd(np.eye(3)), [1, 0, 0, 0, 1, 0])

    def test_encode_quarter_turn(self):
        np.testing.assert_allclose(matrix_to_sixd(RZ90), [0, 1, 0, -1, 0, 0])

    @pytest.mark.parametrize("r", [[0, 0, 0, 0, 1, 0], [1, 0, 0, 2, 0, 0], [1e-10, 0, 0, 0, 1, 0]])
    def test_degenerate(self, r):
        with pytest.raises(DegenerateSixD):
            sixd_to_matrix(r)

    def test_not_a_rotation(self):
        with pytest.raises(NotARotation):
            matrix_to_sixd(np.diag([1.0, 1.0, -1.0]))
        with pytest.raises(NotARotation):
            matrix_to_sixd(2 * np.eye(3))

    def test_random_round_trip(self, rng):
        for _ in range(100):
            m = _rotation(rng)
            np.testing.assert_allclose(sixd_to_matrix(matrix_to_sixd(m)), m, atol=1e-9)

    @given(vec3, vec3)
    def test_decoded_is_proper_rotation(self, a, b):
        try:
            m = sixd_to_matrix(np.concatenate([a, b]))
        except DegenerateSixD:
            return
        assert abs(np.linalg.det(m) - 1.0) < 1e-9
        np.testing.assert_allclose(m.T @ m, np.eye(3), atol=1e-9)
        np.testing.assert_allclose(m[:, 0], a / np.linalg.norm(a), atol=1e-12)
        # encode(decode(r)) is a fixed point of decoding
        np.testing.assert_allclose(sixd_to_matrix(matrix_to_sixd(m)), m, atol=1e-9)


class TestTransforms:
    def test_identity(self, rng):
        p = Pose(rng.standard_normal(3), random_quat(rng))
        assert apply_transform(FrameTransform.identity(), p).allclose(p, atol=1e-12)

    def test_quarter_turn(self):
        out = apply_transform(FrameTransform.from_rotation(RZ90), Pose((1, 0, 0)))
        np.testing.assert_allclose(out.position, [0, 1, 0], atol=1e-15)

    def test_mirror(self):
        out = apply_transform(FrameTransform(np.diag([-1.0, 1.0, 1.0])), Pose((1, 2, 3)))
        np.testing.assert_array_equal(out.position, [-1, 2, 3])
        assert abs(np.linalg.norm(out.orientation) - 1.0) < 1e-12

    def test_translation(self):
        out = apply_transform(FrameTransform(np.eye(3), (0, 0, 0.1)), Pose((1, 2, 3)))
        np.testing.assert_allclose(out.position, [1, 2, 3.1])

    def test_rejects_non_orthogonal_when_flagged(self):
        with pytest.raises(ValueError):
            FrameTransform(np.diag([2.0, 1.0, 1.0]))
        FrameTransform(np.diag([2.0, 1.0, 1.0]), orthogonal=False)

    def test_array_round_trip(self):
        t = FrameTransform(RZ90, (1, 2, 3))
        back = FrameTransform.from_array(t.to_array())
        np.testing.assert_array_equal(back.linear, t.linear)
        np.testing.assert_array_equal(back.translation, t.translation)

    @pytest.mark.parametrize("det", [1.0, -1.0])
    def test_inverse_round_trip(self, rng, det):
        for _ in range(50):
            lin = _rotation(rng) @ np.diag([1.0, 1.0, det])
            t = FrameTransform(lin, rng.standard_normal(3))
            p = Pose(rng.standard_normal(3), random_quat(rng))
            back = apply_transform(t.inverse(), apply_transform(t, p))
            assert back.allclose(p, atol=1e-9)

    def test_general_invertible_round_trip(self, rng):
        lin = rng.standard_normal((3, 3)) + 3 * np.eye(3)
        t = FrameTransform(lin, rng.standard_normal(3), orthogonal=False)
        p = Pose(rng.standard_normal(3), random_quat(rng))
        back = apply_transform(t.inverse(), apply_transform(t, p))
        assert back.allclose(p, atol=1e-9)


class TestGeodesic:
    def test_same(self, rng):
        q = random_quat(rng)
        assert geodesic_distance(q, q) == pytest.approx(0.0, abs=1e-12)

    def test_double_cover(self, rng):
        q = random_quat(rng)
        assert geodesic_distance(q, -q) == pytest.approx(0.0, abs=1e-12)

    def test_quarter_turn(self):
        qz = quat_from_axis_angle((0, 0, 1), math.pi / 2)
        assert geodesic_distance([1, 0, 0, 0], qz) == pytest.approx(math.pi / 2, abs=1e-12)

    def test_range_and_triangle(self, rng):
        for _ in range(100):
            a, b, c = (random_quat(rng) for _ in range(3))
            ab, bc, ac = geodesic_distance(a, b), geodesic_distance(b, c), geodesic_distance(a, c)
            assert 0.0 <= ab <= math.pi
            assert ac <= ab + bc + 1e-9

    @settings(max_examples=50)
    @given(st.floats(0, math.pi))
    def test_matches_rotation_angle(self, angle):
        q = quat_from_axis_angle((0.6, 0.0, 0.8), angle)
        assert geodesic_distance(q, [1, 0, 0, 0]) == pytest.approx(angle, abs=1e-7)
