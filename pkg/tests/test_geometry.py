import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from contactmpc.geometry import (
    Pose,
    quat_from_axis_angle,
    quat_from_rotvec,
    quat_normalize,
    quat_rotate,
    quat_to_matrix,
    rotation_distance,
    transform_keypoint_to_world,
)

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])


def random_quat(rng):
    return quat_normalize(rng.normal(size=4))


class TestRotationDistance:
    def test_identity_case(self):
        q = quat_from_axis_angle((0.3, 0.2, 0.9), 0.7)
        assert rotation_distance(q, q) == pytest.approx(0.0, abs=1e-12)

    def test_orthogonal_quaternions(self):
        q = quat_from_axis_angle((1, 0, 0), np.pi)
        assert rotation_distance(IDENTITY, q) == pytest.approx(1.0, abs=1e-12)

    def test_quarter_turn(self):
        # dot(identity, 90 deg about z) = cos(45 deg) = sqrt(2)/2, so 1 - 1/2
        q = quat_from_axis_angle((0, 0, 1), np.pi / 2)
        assert rotation_distance(IDENTITY, q) == pytest.approx(0.5, abs=1e-12)

    def test_symmetry_and_sign_flip(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            a, b = random_quat(rng), random_quat(rng)
            assert rotation_distance(a, b) == pytest.approx(rotation_distance(b, a), abs=1e-12)
            assert rotation_distance(a, -a) == pytest.approx(0.0, abs=1e-12)
            assert rotation_distance(a, b) == pytest.approx(rotation_distance(-a, b), abs=1e-12)

    def test_non_unit_rejected(self):
        with pytest.raises(ValueError):
            rotation_distance(np.array([1.0, 1.0, 0.0, 0.0]), IDENTITY)


class TestTransforms:
    def test_identity(self):
        p = transform_keypoint_to_world(Pose.identity(), np.array([0.05, 0, 0]))
        np.testing.assert_allclose(p, [0.05, 0, 0], atol=1e-15)

    def test_translation(self):
        pose = Pose(position=(0.1, 0, 0))
        p = transform_keypoint_to_world(pose, np.array([0.05, 0, 0]))
        np.testing.assert_allclose(p, [0.15, 0, 0], atol=1e-15)

    def test_half_turn_about_z(self):
        pose = Pose(orientation=quat_from_axis_angle((0, 0, 1), np.pi))
        p = transform_keypoint_to_world(pose, np.array([0.05, 0, 0]))
        np.testing.assert_allclose(p, [-0.05, 0, 0], atol=1e-12)


@settings(max_examples=50, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_compose_inverse_is_identity(seed):
    rng = np.random.default_rng(seed)
    pose = Pose(rng.normal(size=3), random_quat(rng))
    ident = pose.compose(pose.inverse())
    assert np.linalg.norm(ident.position) < 1e-9
    assert rotation_distance(ident.orientation, IDENTITY) < 1e-9


@settings(max_examples=30, deadline=None)
@given(st.integers(min_value=0, max_value=10_000))
def test_compose_associative(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (Pose(rng.normal(size=3), random_quat(rng)) for _ in range(3))
    left = a.compose(b).compose(c)
    right = a.compose(b.compose(c))
    assert np.linalg.norm(left.position - right.position) < 1e-9
    assert rotation_distance(left.orientation, right.orientation) < 1e-9


def test_quaternion_stays_normalized():
    rng = np.random.default_rng(11)
    pose = Pose(np.zeros(3), random_quat(rng))
    for _ in range(50):
        pose = pose.compose(Pose(rng.normal(size=3) * 0.01, random_quat(rng)))
    assert abs(np.linalg.norm(pose.orientation) - 1.0) < 1e-9


def test_rotvec_exponential_matches_matrix():
    rng = np.random.default_rng(7)
    for _ in range(20):
        w = rng.normal(size=3)
        q = quat_from_rotvec(w)
        v = rng.normal(size=3)
        np.testing.assert_allclose(quat_rotate(q, v), quat_to_matrix(q) @ v, atol=1e-12)
