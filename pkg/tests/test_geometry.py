"""Tests for poses, projection, rays and camera/motion tracks."""

from __future__ import annotations

import numpy as np
import pytest

from latent4d import autodiff as ad
from latent4d.errors import BehindCamera, OutOfBounds, OutOfRange, ShapeMismatch
from latent4d.geometry import (
    CameraIntrinsics,
    PoseSE3,
    camera_track_general,
    camera_track_vehicle,
    identity_camera,
    identity_motion,
    inverse_transform_points,
    motion_track_planar,
    motion_track_se3,
    pixel_grid,
    pose_compose,
    pose_from_yaw_pitch,
    pose_inverse,
    project,
    project_points,
    ray_for_pixel,
    rays_for_pixels,
    transform_points,
    yaw_matrix,
)

INTR = CameraIntrinsics.from_fov(32, 24, np.deg2rad(60.0))


class TestIntrinsics:
    """Tests for CameraIntrinsics."""

    def test_from_fov_centers_principal_point(self) -> None:
        assert (INTR.cx, INTR.cy) == (16.0, 12.0)
        assert INTR.fx == pytest.approx(16.0 / np.tan(np.deg2rad(30.0)))

    def test_rejects_bad_focal_length(self) -> None:
        with pytest.raises(OutOfRange):
            CameraIntrinsics(0.0, 1.0, 1.0, 1.0, 4, 4)

    def test_rejects_principal_point_outside(self) -> None:
        with pytest.raises(OutOfRange):
            CameraIntrinsics(1.0, 1.0, 5.0, 1.0, 4, 4)

    def test_pixel_grid_is_row_major(self) -> None:
        grid = pixel_grid(INTR)
        assert grid.shape == (32 * 24, 2)
        np.testing.assert_array_equal(grid[0], [0.5, 0.5])
        np.testing.assert_array_equal(grid[1], [1.5, 0.5])
        np.testing.assert_array_equal(grid[32], [0.5, 1.5])


class TestProjection:
    """Tests for project and ray generation."""

    def test_point_on_axis_hits_principal_point(self) -> None:
        q = project(PoseSE3.identity(), INTR, [0.0, 0.0, -5.0])
        np.testing.assert_allclose(q, [INTR.cx, INTR.cy])

    def test_up_is_toward_smaller_rows(self) -> None:
        q = project(PoseSE3.identity(), INTR, [0.0, 1.0, -5.0])
        assert q[1] < INTR.cy

    def test_behind_camera_raises(self) -> None:
        with pytest.raises(BehindCamera):
            project(PoseSE3.identity(), INTR, [0.0, 0.0, 1.0])

    def test_ray_projects_back_to_its_pixel(self) -> None:
        """Every point along a pixel's ray projects onto that pixel."""
        pose = pose_from_yaw_pitch(0.3, -0.1, [0.5, 0.2, 1.0])
        rng = np.random.default_rng(0)
        for _ in range(20):
            q = rng.uniform([0, 0], [INTR.width, INTR.height])
            ray = ray_for_pixel(pose, INTR, q)
            assert np.linalg.norm(ray.direction) == pytest.approx(1.0)
            for s in (0.5, 3.0, 40.0):
                np.testing.assert_allclose(project(pose, INTR, ray.at(s)), q, atol=1e-9)

    def test_round_trip_over_random_cameras(self) -> None:
        """Round trip over 1000 random (pose, intrinsics, pixel) triples."""
        rng = np.random.default_rng(7)
        for _ in range(1000):
            w, h = (int(n) for n in rng.integers(8, 128, size=2))
            fx, fy = (float(f) for f in rng.uniform(5.0, 200.0, size=2))
            cx, cy = float(rng.uniform(0, w)), float(rng.uniform(0, h))
            intr = CameraIntrinsics(fx, fy, cx, cy, w, h)
            yaw, pitch = rng.uniform(-np.pi, np.pi), rng.uniform(-1.2, 1.2)
            pose = pose_from_yaw_pitch(float(yaw), float(pitch), rng.normal(size=3))
            q = rng.uniform([0.0, 0.0], [w, h])
            ray = ray_for_pixel(pose, intr, q)
            point = ray.at(float(rng.uniform(0.1, 50.0)))
            np.testing.assert_allclose(project(pose, intr, point), q, rtol=0.0, atol=1e-6)

    def test_center_ray_looks_forward(self) -> None:
        ray = ray_for_pixel(PoseSE3.identity(), INTR, [INTR.cx, INTR.cy])
        np.testing.assert_allclose(ray.direction, [0.0, 0.0, -1.0], atol=1e-12)
        np.testing.assert_allclose(ray.origin, np.zeros(3))

    def test_pixel_outside_raises(self) -> None:
        with pytest.raises(OutOfBounds):
            ray_for_pixel(PoseSE3.identity(), INTR, [-1.0, 3.0])
        with pytest.raises(OutOfBounds):
            rays_for_pixels(PoseSE3.identity(), INTR, [[1.0, 1.0], [1.0, 25.0]])

    def test_project_points_flags_points_behind(self) -> None:
        pts = np.array([[0.0, 0.0, -2.0], [0.0, 0.0, 2.0]])
        uv, in_front = project_points(PoseSE3.identity(), INTR, pts)
        assert in_front.tolist() == [True, False]
        assert np.all(np.isfinite(uv.value))

    def test_project_points_gradient(self) -> None:
        """Pixel coordinates are differentiable in the point positions."""
        pose = pose_from_yaw_pitch(0.2, 0.1, [0.1, 0.0, 0.3])
        base = np.array([[0.3, -0.2, -4.0], [-0.5, 0.4, -3.0]])
        f = lambda p: ad.tsum(project_points(pose, INTR, p)[0] ** 2)  # noqa: E731
        assert ad.finite_diff_check(f, base) < 1e-6


class TestRotations:
    """Tests for rotations and pose algebra."""

    def test_yaw_turns_forward_toward_positive_x(self) -> None:
        a = 0.4
        fwd = yaw_matrix(a).value @ np.array([0.0, 0.0, -1.0])
        np.testing.assert_allclose(fwd, [np.sin(a), 0.0, -np.cos(a)])

    def test_compose_with_inverse_is_identity(self) -> None:
        pose = pose_from_yaw_pitch(0.7, -0.3, [1.0, -2.0, 0.5])
        ident = pose_compose(pose, pose_inverse(pose))
        np.testing.assert_allclose(ident.matrix(), np.eye(4), atol=1e-12)
        assert pose.is_valid()

    def test_apply_inverse_undoes_apply(self) -> None:
        pose = pose_from_yaw_pitch(-1.1, 0.4, [0.2, 0.3, -0.4])
        p = np.array([[1.0, 2.0, 3.0], [-0.5, 0.0, 4.0]])
        np.testing.assert_allclose(pose.apply_inverse(pose.apply(p)).value, p, atol=1e-12)

    def test_from_arrays_checks_shapes(self) -> None:
        with pytest.raises(ShapeMismatch):
            PoseSE3.from_arrays(np.eye(3), np.zeros(2))


class TestTracks:
    """Tests for camera and motion tracks."""

    def test_general_track_frame_zero_is_identity(self) -> None:
        params = np.array([[0.1, 0.0, -0.2, 0.1, 0.05], [0.2, 0.1, -0.4, 0.2, 0.0]])
        track = camera_track_general(params)
        assert track.num_frames == 3
        np.testing.assert_array_equal(track.rotations.value[0], np.eye(3))
        np.testing.assert_array_equal(track.translations.value[0], np.zeros(3))
        np.testing.assert_allclose(track.translations.value[2], [0.2, 0.1, -0.4])
        assert all(track.pose(t).is_valid() for t in range(3))

    def test_general_track_shape_check(self) -> None:
        with pytest.raises(ShapeMismatch):
            camera_track_general(np.zeros((2, 4)))

    def test_vehicle_straight_line(self) -> None:
        """Zero azimuthal velocity drives straight down -z in the ground plane."""
        track = camera_track_vehicle(np.full(3, 0.5), np.zeros(3))
        expected = [[0.0, 0.0, -0.5 * t] for t in range(4)]
        np.testing.assert_allclose(track.translations.value, expected, atol=1e-12)

    def test_vehicle_turning_stays_in_plane(self) -> None:
        track = camera_track_vehicle(np.full(4, 0.3), np.full(4, 0.5))
        np.testing.assert_allclose(track.translations.value[:, 1], 0.0)
        assert track.translations.value[-1, 0] > 0.0
        assert all(track.pose(t).is_valid() for t in range(track.num_frames))

    def test_vehicle_gradient(self) -> None:
        """Positions are differentiable in speed and azimuthal velocity."""

        def f(p: ad.DiffTensor) -> ad.DiffTensor:
            track = camera_track_vehicle(p[:, 0], p[:, 1])
            return ad.tsum(track.translations * track.translations) + ad.tsum(track.rotations)

        params = np.array([[0.4, 0.2], [0.5, -0.1], [0.3, 0.3]])
        assert ad.finite_diff_check(f, params) < 1e-6

    def test_identity_camera(self) -> None:
        track = identity_camera(3, "vehicle")
        np.testing.assert_allclose(track.translations.value, np.zeros((4, 3)))
        assert track.params.shape == (3, 2)

    def test_planar_motion_moves_in_xz(self) -> None:
        params = np.zeros((2, 2, 2))
        params[:, 1] = [[0.1, -0.2], [0.2, -0.4]]
        track = motion_track_planar(params)
        assert (track.num_frames, track.num_components) == (3, 2)
        np.testing.assert_allclose(track.translations.value[2, 1], [0.2, 0.0, -0.4])
        np.testing.assert_allclose(track.rotations.value[2, 1], np.eye(3))

    def test_se3_rotations_are_orthonormal(self) -> None:
        params = np.random.default_rng(1).normal(size=(2, 3, 6))
        track = motion_track_se3(params)
        for t in range(3):
            for j in range(3):
                assert track.pose(t, j).is_valid()

    def test_transform_round_trip(self) -> None:
        params = np.random.default_rng(2).normal(size=(1, 2, 6))
        rot, trans = motion_track_se3(params).frame(1)
        pts = ad.constant(np.random.default_rng(3).normal(size=(5, 3)))
        moved = transform_points(rot, trans, pts)
        assert moved.shape == (5, 2, 3)
        for j in range(2):
            back = inverse_transform_points(rot, trans, moved[:, j])
            np.testing.assert_allclose(back.value[:, j], pts.value, atol=1e-12)

    def test_identity_motion(self) -> None:
        track = identity_motion(2, 3, "se3")
        np.testing.assert_allclose(track.translations.value, np.zeros((3, 3, 3)))
        assert track.params.shape == (2, 3, 6)
