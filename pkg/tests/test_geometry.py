import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from handkin.errors import DegenerateInputError, InvalidArgumentError
from handkin.geometry import (
    TransformState,
    apply_normalization,
    back_transform,
    camera_rotation,
    gt_transform_params,
    make_state,
    normalize_points,
    postprocess_to_camera,
    to_normalized_frame,
)
from handkin.hand_model import fkine_batch, hand_scale
from handkin.topology import joint_index

from conftest import random_lambda

com_st = st.tuples(st.floats(-400, 400), st.floats(-400, 400), st.floats(50, 2000))


class TestCameraRotation:
    def test_on_axis_identity(self):
        np.testing.assert_allclose(camera_rotation([0, 0, 500]), np.eye(3), atol=1e-15)

    def test_diagonal_example(self):
        R = camera_rotation([100, 0, 100])
        np.testing.assert_allclose(R @ [100, 0, 100], [0, 0, 100 * math.sqrt(2)], atol=1e-9)
        np.testing.assert_allclose(R.T @ [0, 0, 100 * math.sqrt(2)], [100, 0, 100], atol=1e-9)

    def test_alignment_many(self):
        rng = np.random.default_rng(0)
        coms = np.column_stack([rng.uniform(-400, 400, (1000, 2)), rng.uniform(50, 2000, 1000)])
        for com in coms:
            v = camera_rotation(com) @ com
            n = np.linalg.norm(com)
            assert np.hypot(v[0], v[1]) < 1e-9 * n
            assert v[2] == pytest.approx(n, rel=1e-12)

    @given(com_st)
    def test_proper_rotation(self, com):
        R = camera_rotation(com)
        np.testing.assert_allclose(R @ R.T, np.eye(3), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0)

    @pytest.mark.parametrize("z", [0.0, -10.0])
    def test_rejects_behind_camera(self, z):
        with pytest.raises(InvalidArgumentError):
            camera_rotation([1, 2, z])


class TestGtParams:
    def _joints_along(self, direction):
        j = np.zeros((21, 3))
        for f_off, f in enumerate("TIMRP"):
            for k_off, k in enumerate(("MCP", "PIP", "DIP", "TIP")):
                j[joint_index(f, k)] = (f_off * 20.0, 0, 0) + np.asarray(direction) * 10.0 * k_off
        j[0] = (-50, -30, 0)
        return j

    def test_along_x(self):
        _, alpha, _ = gt_transform_params(self._joints_along([1, 0, 0]))
        assert alpha == 0.0

    def test_along_minus_y(self):
        _, alpha, _ = gt_transform_params(self._joints_along([0, -1, 0]))
        assert alpha == pytest.approx(-math.pi / 2)

    def test_scale_matches_hand_scale(self, topo, rng):
        lam = random_lambda(rng, topo, n=20)
        for x, j in zip(lam, fkine_batch(lam, topo)):
            t, _, s = gt_transform_params(j, topo)
            assert s == pytest.approx(hand_scale(x, topo.reference_length_sum), rel=1e-9)
            np.testing.assert_array_equal(t, x[0:3])

    def test_degenerate(self):
        with pytest.raises(DegenerateInputError):
            gt_transform_params(self._joints_along([0, 0, 1]))

    @given(st.floats(0.2, 5.0), st.tuples(st.floats(-100, 100), st.floats(-100, 100), st.floats(-100, 100)))
    def test_invariances(self, k, shift):
        from handkin.geometry import rot_z
        from handkin.topology import default_topology

        topo = default_topology()
        rng = np.random.default_rng(5)
        j = fkine_batch(random_lambda(rng, topo), topo)[0]
        _, alpha, s = gt_transform_params(j, topo)
        _, alpha2, _ = gt_transform_params(k * j + shift, topo)
        _, _, s2 = gt_transform_params(j @ rot_z(0.7).T + shift, topo)
        assert math.isclose(alpha2, alpha, abs_tol=1e-9)
        assert math.isclose(s2, s, rel_tol=1e-9)


class TestNormalization:
    def test_identity_chain(self, rng):
        p = rng.normal(size=(21, 3))
        np.testing.assert_array_equal(normalize_points(p, TransformState.identity()), p)

    def test_rotate_axis(self):
        state = TransformState.identity().replace(alpha_z=math.pi / 2)
        np.testing.assert_allclose(apply_normalization([1.0, 0, 0], state, "rotate"), [0, -1, 0], atol=1e-12)

    def test_back_transform_example(self):
        state = TransformState.identity().replace(alpha_z=math.pi / 2, s=2.0, t=[0, 0, 5])
        np.testing.assert_allclose(back_transform([1.0, 0, 0], state), [0, 2, 5], atol=1e-12)

    @given(st.floats(-3.1, 3.1), st.floats(0.3, 3.0), st.tuples(*[st.floats(-100, 100)] * 3))
    def test_round_trip(self, alpha, s, t):
        rng = np.random.default_rng(9)
        p = rng.normal(0, 80, (21, 3))
        state = TransformState.identity().replace(alpha_z=alpha, s=s, t=t)
        np.testing.assert_allclose(back_transform(normalize_points(p, state), state), p, atol=1e-9)

    @pytest.mark.parametrize("stage", ["rescale"])
    def test_non_positive_scale(self, stage):
        state = TransformState.identity().replace(s=0.0)
        with pytest.raises(InvalidArgumentError):
            apply_normalization(np.zeros(3), state, stage)
        with pytest.raises(InvalidArgumentError):
            back_transform(np.zeros(3), state)

    def test_unknown_stage(self):
        with pytest.raises(InvalidArgumentError):
            apply_normalization(np.zeros(3), TransformState.identity(), "shear")


class TestCameraFrame:
    def test_identity(self, rng):
        p = rng.normal(size=(21, 3))
        np.testing.assert_array_equal(postprocess_to_camera(p, TransformState.identity()), p)

    @given(com_st)
    def test_round_trip(self, com):
        rng = np.random.default_rng(2)
        pts = np.asarray(com) + rng.normal(0, 60, (21, 3))
        state = make_state(com)
        np.testing.assert_allclose(postprocess_to_camera(to_normalized_frame(pts, state), state), pts, atol=1e-9)

    def test_full_chain(self, rng):
        com = np.array([40.0, -25.0, 550.0])
        pts = com + rng.normal(0, 60, (21, 3))
        state = make_state(com, t=[3, -4, 10], alpha_z=1.1, s=0.93)
        norm = normalize_points(to_normalized_frame(pts, state), state)
        back = postprocess_to_camera(back_transform(norm, state), state)
        np.testing.assert_allclose(back, pts, atol=1e-9)

    def test_state_json_round_trip(self):
        state = make_state([10.0, 20.0, 500.0], t=[1, 2, 3], alpha_z=0.4, s=1.1)
        again = TransformState.from_dict(state.to_dict())
        np.testing.assert_array_equal(again.r_cam, state.r_cam)
        assert again.alpha_z == state.alpha_z

    def test_alpha_wrapped(self):
        assert TransformState.identity().replace(alpha_z=3 * math.pi).alpha_z == pytest.approx(math.pi)
