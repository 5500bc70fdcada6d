"""Tests for the objective terms."""

from __future__ import annotations

import math

import numpy as np
import pytest

from latent4d import autodiff as ad
from latent4d.config import LossConfig
from latent4d.errors import NonFinite, OutOfBounds, OutOfRange, ShapeMismatch
from latent4d.geometry import CameraIntrinsics, PoseSE3, identity_camera, motion_track_planar
from latent4d.geometry import project as project_point
from latent4d.losses import (
    LOG_COLUMNS,
    KeypointTrack,
    LossBreakdown,
    beta_schedule,
    edge_weights,
    flow_at,
    keypoint_pairs,
    kl_diag_gauss,
    log_row,
    recon_nll,
    reg_depth_slab,
    reg_keypoint_flow,
    reg_keypoint_reproj,
    reg_l1_velocity,
    reg_tv_edge,
    tv_edge_from_weights,
    total_loss,
    validate_tracks,
)

INTR = CameraIntrinsics.from_fov(32, 32, np.deg2rad(60.0))


class TestLikelihood:
    """Tests for the reconstruction NLL, KL and β schedule."""

    def test_perfect_reconstruction_leaves_constant(self) -> None:
        target = np.random.default_rng(0).uniform(size=(5, 3))
        value = recon_nll(target, target, 0.1).item()
        assert value == pytest.approx(math.log(0.1 * math.sqrt(2.0 * math.pi)))

    def test_nll_is_mean_over_channels(self) -> None:
        pred = np.zeros((4, 3))
        target = np.full((4, 3), 0.2)
        const = math.log(0.5 * math.sqrt(2.0 * math.pi))
        assert recon_nll(pred, target, 0.5).item() == pytest.approx(0.04 / 0.5 + const)

    def test_nll_shape_mismatch(self) -> None:
        with pytest.raises(ShapeMismatch):
            recon_nll(np.zeros((2, 3)), np.zeros((3, 3)), 0.1)

    def test_kl_values(self) -> None:
        assert kl_diag_gauss(np.zeros(4), np.zeros(4)).item() == 0.0
        assert kl_diag_gauss([1.0, 2.0], [0.0, 0.0]).item() == pytest.approx(2.5)
        value = kl_diag_gauss([0.0], [math.log(2.0)]).item()
        assert value == pytest.approx(0.5 * (2.0 - 1.0 - math.log(2.0)))

    def test_kl_gradient(self) -> None:
        mu = np.array([0.3, -0.2, 0.5])

        def f(logvar: ad.DiffTensor) -> ad.DiffTensor:
            return kl_diag_gauss(mu, logvar)

        assert ad.finite_diff_check(f, [0.1, -0.4, 0.2]) < 1e-6

    def test_kl_matches_monte_carlo(self) -> None:
        """The closed form agrees with a 10^6-sample estimate of E_q[log q(z) - log p(z)]."""
        rng = np.random.default_rng(12)
        for _ in range(20):
            mu = rng.uniform(-0.5, 0.5, size=2)
            logvar = rng.uniform(-0.5, 0.5, size=2)
            eps = rng.standard_normal((1_000_000, 2))
            z = mu + np.exp(0.5 * logvar) * eps
            log_ratio = 0.5 * (z * z - eps * eps - logvar)
            estimate = float(np.mean(log_ratio.sum(axis=-1)))
            assert kl_diag_gauss(mu, logvar).item() == pytest.approx(estimate, abs=1e-2)

    def test_beta_schedule(self) -> None:
        assert beta_schedule(0, 100, 2.0) == 0.0
        assert beta_schedule(50, 100, 2.0) == pytest.approx(1.0)
        assert beta_schedule(500, 100, 2.0) == 2.0
        with pytest.raises(OutOfRange):
            beta_schedule(1, 0, 1.0)


class TestVelocityAndTv:
    """Tests for the velocity and edge-aware TV regularizers."""

    def test_constant_velocity(self) -> None:
        """Each step moves by (0.1, 0, -0.2), an L1 norm of 0.3."""
        params = np.array([[[0.1, -0.2]], [[0.2, -0.4]], [[0.3, -0.6]]])
        value = reg_l1_velocity(motion_track_planar(params)).item()
        assert value == pytest.approx(0.3)

    def test_velocity_is_mean_over_components(self) -> None:
        params = np.zeros((1, 2, 2))
        params[0, 1] = [0.4, 0.0]
        assert reg_l1_velocity(motion_track_planar(params)).item() == pytest.approx(0.2)

    def test_flat_guide_gives_unit_weights(self) -> None:
        wx, wy = edge_weights(np.full((8, 8, 3), 0.4), 10.0)
        np.testing.assert_allclose(wx, 1.0)
        np.testing.assert_allclose(wy, 1.0)

    def test_edges_attenuate_weights(self) -> None:
        guide = np.zeros((8, 8))
        guide[:, 4:] = 1.0
        wx, wy = edge_weights(guide, 10.0)
        assert wx[4, 4] < 0.5
        np.testing.assert_allclose(wy, 1.0)
        assert wx[4, 0] > wx[4, 4]

    def test_ramp_mask(self) -> None:
        mask = np.tile(np.arange(6) * 0.1, (5, 1))
        ones = np.ones((5, 6))
        assert tv_edge_from_weights(mask, ones, ones).item() == pytest.approx(0.1)
        stacked = np.stack([mask, mask], axis=-1)
        assert tv_edge_from_weights(stacked, ones, ones).item() == pytest.approx(0.2)

    def test_tiny_mask_is_zero(self) -> None:
        ones = np.ones((2, 5))
        assert tv_edge_from_weights(np.ones((2, 5)), ones, ones).item() == 0.0

    def test_aligned_mask_edges_cost_less(self) -> None:
        """A mask edge along an image edge is cheaper than one in a flat region."""
        guide = np.zeros((10, 10))
        guide[:, 5:] = 1.0
        aligned = np.zeros((10, 10))
        aligned[:, 5:] = 1.0
        shifted = np.zeros((10, 10))
        shifted[:, 2:] = 1.0
        assert reg_tv_edge(aligned, guide, 10.0).item() < reg_tv_edge(shifted, guide, 10.0).item()

    def test_tv_shape_mismatch(self) -> None:
        with pytest.raises(ShapeMismatch):
            reg_tv_edge(np.zeros((4, 4)), np.zeros((5, 4)), 10.0)


class TestDepthSlab:
    """Tests for the density/depth consistency term."""

    def test_hand_computed_value(self) -> None:
        dist = np.array([[1.0, 2.0, 3.0, 4.0]])
        p = np.array([[0.5, 0.0, 0.5, 0.9]])
        value = reg_depth_slab(p, dist, [3.0]).item()
        # nearer: relu(0.5 - 0.01); within (one sample): 6.5 · relu(0.975 - 0.5)
        assert value == pytest.approx(0.49 + 6.5 * 0.475)

    def test_mean_over_valid_rays(self) -> None:
        dist = np.array([[1.0, 2.0, 3.0, 4.0]] * 2)
        p = np.array([[0.5, 0.0, 0.5, 0.9], [1.0, 1.0, 1.0, 1.0]])
        one = reg_depth_slab(p[:1], dist[:1], [3.0]).item()
        both = reg_depth_slab(p, dist, [3.0, 3.0], valid=[True, False]).item()
        assert both == pytest.approx(one)
        assert reg_depth_slab(p, dist, [3.0, 3.0], valid=[False, False]).item() == 0.0

    def test_beyond_slab_is_free(self) -> None:
        dist = np.array([[1.0, 2.0, 3.0, 4.0]])
        p = np.array([[0.0, 0.0, 1.0, 1.0]])
        assert reg_depth_slab(p, dist, [3.0]).item() == 0.0

    def test_within_weight_split_over_samples(self) -> None:
        dist = np.array([[2.99, 3.0, 3.01]])
        p = np.zeros((1, 3))
        assert reg_depth_slab(p, dist, [3.0]).item() == pytest.approx(6.5 * 0.975)

    def test_shape_mismatch(self) -> None:
        with pytest.raises(ShapeMismatch):
            reg_depth_slab(np.zeros((1, 3)), np.zeros((1, 4)), [3.0])


def _track(
    track_id: int, points: list[tuple[float, float] | None], depth0: float = math.nan
) -> KeypointTrack:
    pos = np.array([p if p is not None else (math.nan, math.nan) for p in points], dtype=float)
    return KeypointTrack(track_id, pos, depth0)


class TestKeypoints:
    """Tests for the keypoint flow and reprojection terms."""

    def test_pairs_skip_absent_frames(self) -> None:
        tracks = [_track(0, [(1, 1), (2, 2)]), _track(1, [(3, 3), None]), _track(2, [None, (4, 4)])]
        pairs = keypoint_pairs(tracks, 1)
        assert len(pairs) == 1
        np.testing.assert_array_equal(pairs.kt, [[2.0, 2.0]])

    def test_validate_tracks(self) -> None:
        validate_tracks([_track(0, [(1, 1), None])], INTR)
        with pytest.raises(OutOfBounds):
            validate_tracks([_track(0, [(1, 1), (40, 2)])], INTR)

    def test_flow_lookup_of_constant_map(self) -> None:
        fm = np.tile(np.array([1.5, -0.5]), (8, 8, 1))
        out = flow_at(fm, np.array([[0.5, 0.5], [3.2, 6.1], [7.5, 7.5]]))
        np.testing.assert_allclose(out.value, [[1.5, -0.5]] * 3)

    def test_flow_term_zero_for_exact_flow(self) -> None:
        fm = np.tile(np.array([2.0, 1.0]), (8, 8, 1))
        tracks = [_track(0, [(2.5, 2.5), (4.5, 3.5)]), _track(1, [(5.5, 1.5), (7.5, 2.5)])]
        assert reg_keypoint_flow(tracks, {1: fm}).item() == 0.0
        shifted = reg_keypoint_flow(tracks, {1: fm + np.array([1.0, 0.0])}).item()
        assert shifted == pytest.approx(1.0)

    def test_flow_term_without_pairs(self) -> None:
        assert reg_keypoint_flow([], {1: np.zeros((4, 4, 2))}).item() == 0.0

    def _moving_point_tracks(self, velocity: np.ndarray) -> list[KeypointTrack]:
        cam = PoseSE3.identity()
        tracks = []
        for i, p in enumerate([[0.3, 0.2, -4.0], [-0.5, -0.1, -3.0], [0.1, 0.4, -5.0]]):
            p = np.asarray(p)
            k0 = project_point(cam, INTR, p)
            k1 = project_point(cam, INTR, p + velocity)
            tracks.append(KeypointTrack(i, np.stack([k0, k1]), float(np.linalg.norm(p))))
        return tracks

    def test_reprojection_zero_under_true_motion(self) -> None:
        velocity = np.array([0.2, 0.0, -0.1])
        tracks = self._moving_point_tracks(velocity)
        params = np.array([[[0.0, 0.0], [velocity[0], velocity[2]]]])
        value, skipped = reg_keypoint_reproj(
            tracks, identity_camera(1), motion_track_planar(params), INTR
        )
        assert value.item() == pytest.approx(0.0, abs=1e-18)
        assert skipped == 0

    def test_reprojection_picks_best_component(self) -> None:
        """With the motion unknown, the error is that of the nearer component only."""
        velocity = np.array([0.2, 0.0, -0.1])
        tracks = self._moving_point_tracks(velocity)
        params = ad.parameter(np.array([[[0.0, 0.0], [0.15, -0.1]]]))
        motion = motion_track_planar(params)
        value, _ = reg_keypoint_reproj(tracks, identity_camera(1), motion, INTR)
        assert value.item() > 0.0
        grad = ad.backward(value)[params]
        assert np.all(grad[0, 0] == 0.0)
        assert grad[0, 1, 0] < 0.0

    def test_reprojection_depth_from_map(self) -> None:
        velocity = np.array([0.2, 0.0, 0.0])
        tracks = self._moving_point_tracks(velocity)
        no_depth = [KeypointTrack(t.track_id, t.positions) for t in tracks]
        depth_map = np.zeros((INTR.height, INTR.width))
        for t in tracks:
            c, r = int(t.positions[0, 0]), int(t.positions[0, 1])
            depth_map[r, c] = t.depth0
        params = np.array([[[0.0, 0.0], [0.2, 0.0]]])
        motion = motion_track_planar(params)
        value, skipped = reg_keypoint_reproj(no_depth, identity_camera(1), motion, INTR, depth_map)
        assert skipped == 0
        assert value.item() == pytest.approx(0.0, abs=1e-18)

    def test_reprojection_skips_unusable_depth(self) -> None:
        tracks = [KeypointTrack(0, np.array([[10.0, 10.0], [11.0, 10.0]]), -1.0)]
        value, skipped = reg_keypoint_reproj(
            tracks, identity_camera(1), motion_track_planar(np.zeros((1, 1, 2))), INTR
        )
        assert skipped == 1
        assert value.item() == 0.0


class TestTotal:
    """Tests for total_loss and log rows."""

    def test_weighted_sum(self) -> None:
        parts = LossBreakdown(
            recon_nll=ad.constant(1.0),
            recon_x0=ad.constant(2.0),
            kl=ad.constant(3.0),
            beta=0.5,
            reg_velocity=ad.constant(1.0),
            reg_tv=ad.constant(1.0),
            reg_depth_slab=ad.constant(1.0),
            reg_kp_flow=ad.constant(1.0),
            reg_kp_reproj=ad.constant(1.0),
        )
        w = LossConfig()
        expected = (
            1.0
            + 2.0 * w.x0_weight
            + 1.5
            + w.l1_velocity_strength
            + w.tv_strength
            + w.depth_consistency_strength
            + w.keypoint_flow_strength
            + w.keypoint_depth_strength
        )
        assert total_loss(parts, w).item() == pytest.approx(expected)

    def test_non_finite_term_raises(self) -> None:
        parts = LossBreakdown(recon_nll=ad.constant(math.nan))
        with pytest.raises(NonFinite) as info:
            total_loss(parts, LossConfig(), step=7)
        assert info.value.step == 7
        assert "recon_nll" in info.value.terms

    def test_log_row_columns(self) -> None:
        parts = LossBreakdown(recon_nll=ad.constant(0.5))
        row = log_row(3, parts, ad.constant(0.5))
        assert tuple(row) == LOG_COLUMNS
        assert row["step"] == 3
        assert row["total"] == 0.5
