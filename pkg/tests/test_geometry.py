"""Rotations, poses, frame chaining and the height Jacobians.

Independent oracles: scipy's rotation class for the Euler matrix, dense 4x4
homogeneous products for frame chains, and central differences written out
here for the Jacobians.
"""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.spatial.transform import Rotation as SciRot

from reefmap.geometry import (FrameGraph, Pose, Rotation, euler_matrix, height_measurement,
                              jacobian_range, jacobian_rotation, transform_point)

angle = st.floats(-math.pi, math.pi, allow_nan=False)
pitch_angle = st.floats(-1.5, 1.5, allow_nan=False)
coord = st.floats(-5.0, 5.0, allow_nan=False)


def random_pose(rng, cov_scale=0.0) -> Pose:
    yaw, roll = rng.uniform(-math.pi, math.pi, 2)
    pitch = rng.uniform(-1.4, 1.4)
    cov = np.zeros((6, 6))
    if cov_scale:
        A = rng.normal(size=(6, 6)) * cov_scale
        cov = A @ A.T
    return Pose(rng.uniform(-3, 3, 3), Rotation(yaw=yaw, pitch=pitch, roll=roll), cov)


def fd_height_grad(point, pose, step=1e-6):
    g = np.zeros(3)
    for k in range(3):
        e = np.zeros(3)
        e[k] = step
        g[k] = (height_measurement(point + e, pose) - height_measurement(point - e, pose)) / (2 * step)
    return g


def fd_height_angles(point, pose, step):
    out = np.zeros(3)
    base = pose.rotation.angles
    for k in range(3):
        vals = []
        for sign in (1, -1):
            a = base.copy()
            a[k] += sign * step
            p = Pose(pose.translation, Rotation(roll=a[0], pitch=a[1], yaw=a[2]))
            vals.append(height_measurement(point, p))
        out[k] = (vals[0] - vals[1]) / (2 * step)
    return out


class TestRotation:
    @given(angle, pitch_angle, angle)
    def test_matrix_matches_scipy_intrinsic_zyx(self, yaw, pitch, roll):
        ref = SciRot.from_euler("ZYX", [yaw, pitch, roll]).as_matrix()
        assert np.allclose(Rotation(yaw=yaw, pitch=pitch, roll=roll).matrix, ref, atol=1e-12)

    @given(angle, pitch_angle, angle)
    def test_orthonormal(self, yaw, pitch, roll):
        R = euler_matrix(yaw, pitch, roll)
        assert np.max(np.abs(R.T @ R - np.eye(3))) <= 1e-12

    @given(angle, pitch_angle, angle)
    def test_compose_with_inverse_is_identity(self, yaw, pitch, roll):
        r = Rotation(yaw=yaw, pitch=pitch, roll=roll)
        assert np.max(np.abs(r.compose(r.inverse()).matrix - np.eye(3))) <= 1e-12

    @given(angle, st.floats(-1.4, 1.4), angle)
    def test_from_matrix_round_trip(self, yaw, pitch, roll):
        r = Rotation(yaw=yaw, pitch=pitch, roll=roll)
        assert np.allclose(Rotation.from_matrix(r.matrix).matrix, r.matrix, atol=1e-12)


class TestPose:
    def test_gimbal_lock_rejected(self):
        with pytest.raises(ValueError, match="gimbal"):
            Pose(rotation=Rotation(pitch=math.pi / 2))
        with pytest.raises(ValueError, match="gimbal"):
            Pose(rotation=Rotation(pitch=-math.pi / 2))

    def test_rejects_asymmetric_or_indefinite_covariance(self):
        bad = np.zeros((6, 6))
        bad[0, 1] = 1.0
        with pytest.raises(ValueError, match="symmetric"):
            Pose(covariance=bad)
        with pytest.raises(ValueError, match="semi-definite"):
            Pose(covariance=-np.eye(6))

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            Pose(translation=(np.nan, 0, 0))

    def test_params_round_trip(self, rng):
        p = random_pose(rng)
        assert np.allclose(Pose.from_params(p.params).matrix, p.matrix, atol=1e-12)

    def test_inverse_round_trip(self, rng):
        for _ in range(50):
            pose = random_pose(rng)
            pt = rng.uniform(-5, 5, 3)
            back = transform_point(pose.inverse(), transform_point(pose, pt))
            assert np.allclose(back, pt, atol=1e-10)

    def test_compose_matches_homogeneous_product(self, rng):
        a, b = random_pose(rng), random_pose(rng)
        assert np.allclose((a @ b).matrix, a.matrix @ b.matrix, atol=1e-12)

    def test_compose_covariance_first_order(self, rng):
        # translation-only covariance on the child passes through the parent rotation
        a = random_pose(rng)
        cov = np.zeros((6, 6))
        cov[:3, :3] = np.diag([0.04, 0.01, 0.09])
        b = Pose(rng.uniform(-1, 1, 3), Rotation(), cov)
        R = a.rotation.matrix
        assert np.allclose((a @ b).translation_covariance, R @ cov[:3, :3] @ R.T, atol=1e-8)

    def test_composed_covariance_stays_psd(self, rng):
        for _ in range(20):
            c = (random_pose(rng, 0.05) @ random_pose(rng, 0.05)).covariance
            assert np.linalg.eigvalsh(c).min() >= -1e-10


class TestTransformPoint:
    def test_identity(self):
        assert np.array_equal(transform_point(Pose(), [1, 2, 3]), [1.0, 2.0, 3.0])

    def test_quarter_turn_about_z(self):
        out = transform_point(Pose(rotation=Rotation(yaw=math.pi / 2)), [1, 0, 0])
        assert np.allclose(out, [0, 1, 0], atol=1e-12)

    def test_pure_translation(self):
        out = transform_point(Pose((0.5, -0.2, 1.0)), [0, 0, 0])
        assert np.array_equal(out, [0.5, -0.2, 1.0])

    def test_batch_matches_single(self, rng):
        pose = random_pose(rng)
        pts = rng.normal(size=(10, 3))
        batch = transform_point(pose, pts)
        for p, q in zip(pts, batch):
            assert np.allclose(transform_point(pose, p), q, atol=1e-14)


class TestFrameGraph:
    def test_chain_equals_composition(self, rng):
        ib, bs, bm = random_pose(rng), random_pose(rng), random_pose(rng)
        g = FrameGraph(ib, bs, bm)
        assert np.max(np.abs(g.sensor_in_inertial().matrix - ib.matrix @ bs.matrix)) <= 1e-10
        assert np.max(np.abs(g.sensor_in_map().matrix - bm.matrix @ bs.matrix)) <= 1e-10


class TestHeightMeasurement:
    def test_identity_pose_flips_sign(self):
        assert height_measurement([1, 2, 3], Pose()) == -3.0

    def test_sensor_one_meter_above_origin_looking_down(self):
        # NED: one meter up is z = -1; the optical axis is mapped onto +z (down)
        assert height_measurement([0, 0, 1.0], Pose((0, 0, -1.0))) == pytest.approx(0.0, abs=1e-15)

    def test_matches_dense_homogeneous_chain(self, rng):
        for _ in range(100):
            pose = random_pose(rng)
            p = rng.uniform(-4, 4, 3)
            ref = -(pose.matrix @ np.append(p, 1.0))[2]
            assert height_measurement(p, pose) == pytest.approx(ref, abs=1e-12)

    def test_yaw_invariance(self, rng):
        for _ in range(50):
            pose = random_pose(rng)
            p = rng.uniform(-4, 4, 3)
            turn = Pose(rotation=Rotation(yaw=rng.uniform(-3, 3)))
            # rotating the whole sensor about the map's vertical axis keeps elevation
            assert height_measurement(p, turn @ pose) == pytest.approx(
                height_measurement(p, pose), abs=1e-12)


class TestJacobianRange:
    def test_identity(self):
        assert np.array_equal(jacobian_range([1, 2, 3], Pose()), [-0.0, -0.0, -1.0])
        assert np.allclose(fd_height_grad(np.array([1.0, 2, 3]), Pose()), [0, 0, -1], atol=1e-6)

    def test_unit_norm(self, rng):
        for _ in range(200):
            assert abs(np.linalg.norm(jacobian_range(None, random_pose(rng))) - 1.0) <= 1e-10

    def test_matches_finite_differences(self, rng):
        for _ in range(200):
            pose = random_pose(rng)
            p = rng.uniform(-4, 4, 3)
            J = jacobian_range(p, pose)
            fd = fd_height_grad(p, pose)
            assert np.linalg.norm(J - fd) <= 1e-6 * max(1.0, np.linalg.norm(fd))


class TestJacobianRotation:
    def test_stationary_point(self):
        # for a point on the sensor's own origin the height does not depend on attitude
        pose = Pose((0.3, -0.2, -1.0), Rotation(yaw=0.4, pitch=0.2, roll=-0.1))
        assert np.max(np.abs(jacobian_rotation([0, 0, 0], pose))) <= 1e-6

    def test_identity_optical_axis_point_has_zero_roll_pitch(self):
        # at identity, tilting (0, 0, r) changes its height only to second order
        for r in (1.0, 2.0):
            J = jacobian_rotation([0, 0, r], Pose())
            assert np.max(np.abs(J)) <= 1e-6

    def test_linear_in_range_along_a_ray(self):
        pose = Pose(rotation=Rotation(pitch=0.3, roll=0.2))
        d = np.array([0.2, -0.1, 1.0])
        J1 = jacobian_rotation(d, pose)
        J2 = jacobian_rotation(2 * d, pose)
        nz = np.abs(J1) > 1e-3
        assert nz[:2].all()
        assert np.allclose(J2[nz] / J1[nz], 2.0, atol=1e-4)

    def test_matches_independent_differences(self, rng):
        for _ in range(100):
            pose = random_pose(rng)
            p = rng.uniform(-4, 4, 3)
            assert np.allclose(jacobian_rotation(p, pose), fd_height_angles(p, pose, 1e-5),
                               atol=1e-6)

    def test_step_halving_stable(self, rng):
        for _ in range(100):
            pose = random_pose(rng)
            p = rng.uniform(-4, 4, 3)
            a = jacobian_rotation(p, pose, 1e-6)
            b = jacobian_rotation(p, pose, 5e-7)
            assert np.max(np.abs(a - b)) < 1e-7

    def test_batch_rows(self, rng):
        pose = random_pose(rng)
        pts = rng.normal(size=(5, 3))
        batch = jacobian_rotation(pts, pose)
        assert batch.shape == (5, 3)
        for p, row in zip(pts, batch):
            assert np.allclose(jacobian_rotation(p, pose), row, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(coord, coord, coord, angle, pitch_angle, angle)
def test_round_trip_property(x, y, z, yaw, pitch, roll):
    pose = Pose((x, y, z), Rotation(yaw=yaw, pitch=pitch, roll=roll))
    p = np.array([z, x, y])
    assert np.allclose(transform_point(pose.inverse(), transform_point(pose, p)), p, atol=1e-10)
