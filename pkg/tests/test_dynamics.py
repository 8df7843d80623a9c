import numpy as np
import pytest

from contactmpc.assets import load_asset
from contactmpc.dynamics import (
    DEFAULT_ENV,
    Contact,
    DynamicsError,
    DynamicsParams,
    FACET_SLACK,
    SystemState,
    build_facets,
    comfree_step,
    detect_contacts,
)
from contactmpc.geometry import Pose

CUBE = load_asset("cube")
PARAMS = DynamicsParams()

FAR_EE = np.array([2.0, 2.0, 1.0])


def free_state(z=1.0):
    return SystemState(Pose((0.0, 0.0, z)), FAR_EE)


def resting_state():
    return SystemState(Pose((0.0, 0.0, 0.05)), FAR_EE)


class TestDetectContacts:
    def test_ee_near_face(self):
        # ee centered off the -x face at surface distance ee_radius + 0.001
        gap = 0.001
        x = -0.05 - PARAMS.ee_radius - gap
        state = SystemState(Pose((0, 0, 0.5)), (x, 0.0, 0.5))
        contacts = detect_contacts(state, CUBE, DEFAULT_ENV, PARAMS)
        ee = [c for c in contacts if c.body_pair == "ee-object"]
        assert len(ee) == 1
        assert ee[0].gap == pytest.approx(gap, abs=1e-12)
        np.testing.assert_allclose(ee[0].normal, [-1, 0, 0], atol=1e-12)

    def test_everything_far(self):
        state = SystemState(Pose((0, 0, 1.0)), (1.0, 1.0, 1.0))
        assert detect_contacts(state, CUBE, DEFAULT_ENV, PARAMS) == []

    def test_resting_cube_corner_contacts(self):
        contacts = detect_contacts(resting_state(), CUBE, DEFAULT_ENV, PARAMS)
        ground = [c for c in contacts if c.body_pair == "object-ground"]
        assert len(ground) == 4
        assert all(abs(c.gap) <= 1e-9 for c in ground)

    def test_ordering_ee_first(self):
        state = SystemState(Pose((0, 0, 0.05)), (-0.06, 0.0, 0.05))
        contacts = detect_contacts(state, CUBE, DEFAULT_ENV, PARAMS)
        assert contacts[0].body_pair == "ee-object"
        assert all(c.body_pair == "object-ground" for c in contacts[1:])


class TestBuildFacets:
    def test_four_unit_directions(self):
        contacts = detect_contacts(resting_state(), CUBE, DEFAULT_ENV, PARAMS)
        fs = build_facets(contacts, resting_state(), CUBE, PARAMS)
        assert fs.J_tilde.shape == (len(contacts) * 4, 9)
        np.testing.assert_allclose(np.linalg.norm(fs.facet_directions, axis=1), 1.0, atol=1e-12)

    def test_frictionless_limit(self):
        params = DynamicsParams(mu=0.0)
        contacts = detect_contacts(resting_state(), CUBE, DEFAULT_ENV, params)
        fs = build_facets(contacts, resting_state(), CUBE, params)
        for i, c in enumerate(contacts):
            for j in range(4):
                np.testing.assert_allclose(fs.facet_directions[4 * i + j], c.normal, atol=1e-12)
                assert fs.phi_tilde[4 * i + j] == pytest.approx(c.gap, abs=1e-15)

    def test_normal_approach_gap_rates(self):
        # hand Jacobian: pure normal object velocity v gives rate (n.e_j)(n.v)
        state = resting_state()
        contacts = detect_contacts(state, CUBE, DEFAULT_ENV, PARAMS)
        fs = build_facets(contacts, state, CUBE, PARAMS)
        speed = 0.3
        v_sys = np.zeros(9)
        v_sys[0:3] = np.array([0, 0, 1.0]) * speed  # pure +z object translation
        rates = fs.J_tilde @ v_sys
        k = 0
        for c in contacts:
            for j in range(4):
                expect = float(c.normal @ fs.facet_directions[k]) * float(c.normal @ v_sys[0:3])
                assert rates[k] == pytest.approx(expect, abs=1e-12)
                k += 1

    def test_degenerate_normal_rejected(self):
        bad = Contact("object-ground", np.zeros(3), np.zeros(3), 0.0, np.zeros(3), np.zeros(3))
        with pytest.raises(DynamicsError):
            build_facets([bad], resting_state(), CUBE, PARAMS)


class TestComfreeStep:
    def test_free_space_command_tracking(self):
        state = free_state()
        rng = np.random.default_rng(0)
        for _ in range(50):
            u = rng.uniform(-0.03, 0.03, size=3)
            nxt, lam, _ = comfree_step(state, u, PARAMS, CUBE)
            np.testing.assert_allclose(nxt.ee_position - state.ee_position, u, atol=1e-12)
            assert lam.size == 0

    def test_free_fall(self):
        nxt, _, _ = comfree_step(free_state(), np.zeros(3), PARAMS, CUBE)
        dz = nxt.object_pose.position[2] - 1.0
        assert dz == pytest.approx(-PARAMS.h * PARAMS.gravity * PARAMS.h, abs=1e-12)

    def test_resting_stability_short(self):
        state = resting_state()
        for _ in range(50):
            state, lam, _ = comfree_step(state, np.zeros(3), PARAMS, CUBE)
            assert lam.size == 0 or lam.min() >= 0.0
            drift = state.object_pose.position[2] - 0.05
            assert abs(drift) < 1e-4

    def test_determinism(self):
        state = SystemState(Pose((0, 0, 0.05)), (-0.06, 0.0, 0.05))
        u = np.array([0.008, 0.002, -0.001])
        a, lam_a, _ = comfree_step(state, u, PARAMS, CUBE)
        b, lam_b, _ = comfree_step(state, u, PARAMS, CUBE)
        assert np.array_equal(a.object_pose.position, b.object_pose.position)
        assert np.array_equal(a.object_pose.orientation, b.object_pose.orientation)
        assert np.array_equal(a.ee_position, b.ee_position)
        assert np.array_equal(lam_a, lam_b)

    def test_friction_cone_membership_while_pushing(self):
        # forces are reported at the pre-step contact set
        state = SystemState(Pose((0, 0, 0.05)), (-0.08, 0.0, 0.03))
        for _ in range(60):
            pre_contacts = detect_contacts(state, CUBE, DEFAULT_ENV, PARAMS)
            state, lam, forces = comfree_step(state, np.array([0.01, 0, 0]), PARAMS, CUBE)
            assert np.all(lam >= 0.0)
            for c, f in zip(pre_contacts, forces):
                f_n = float(c.normal @ f)
                f_t = np.linalg.norm(f - f_n * c.normal)
                assert f_n >= -1e-12
                assert f_t <= PARAMS.mu * f_n * (1.0 + FACET_SLACK) + 1e-9

    def test_separation_zero_force(self):
        # object near ground but moving up fast has zero contact force
        state = SystemState(Pose((0, 0, 0.052)), FAR_EE)
        wrench = np.array([0, 0, 30.0, 0, 0, 0])  # strong upward pull
        nxt, lam, forces = comfree_step(state, np.zeros(3), PARAMS, CUBE, external_wrench=wrench)
        assert np.all(lam == 0.0)
        assert np.all(forces == 0.0)
        assert nxt.object_pose.position[2] > state.object_pose.position[2]

    def test_nan_rejected(self):
        with pytest.raises(DynamicsError):
            comfree_step(free_state(), np.array([np.nan, 0, 0]), PARAMS, CUBE)


class TestStickSlip:
    def test_below_threshold_sticks(self):
        F = 0.5 * PARAMS.mu * PARAMS.m * PARAMS.gravity
        state = resting_state()
        x0 = state.object_pose.position[0]
        for _ in range(50):
            state, _, _ = comfree_step(
                state, np.zeros(3), PARAMS, CUBE, external_wrench=np.array([F, 0, 0, 0, 0, 0])
            )
        assert abs(state.object_pose.position[0] - x0) < 1e-3

    def test_above_threshold_slides(self):
        F = 1.5 * PARAMS.mu * PARAMS.m * PARAMS.gravity
        state = resting_state()
        x0 = state.object_pose.position[0]
        for _ in range(50):
            state, _, _ = comfree_step(
                state, np.zeros(3), PARAMS, CUBE, external_wrench=np.array([F, 0, 0, 0, 0, 0])
            )
        assert state.object_pose.position[0] - x0 > 1e-2
