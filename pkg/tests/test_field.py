"""Tests for the scene function and its building blocks."""

from __future__ import annotations

import numpy as np
import pytest

from latent4d import autodiff as ad
from latent4d.config import RunConfig
from latent4d.errors import OutOfRange, ShapeMismatch
from latent4d.field import (
    ConditioningState,
    FieldShape,
    FieldWeights,
    LearnedField,
    SceneBounds,
    bilinear_sample,
    embed_dim,
    film,
    film_coefficients,
    fourier_embed,
    modulate,
)
from latent4d.geometry import CameraIntrinsics
from latent4d.seeding import rng_for

BOUNDS = SceneBounds((0.0, 0.0, -4.0), 3.0)


def _field(
    config: RunConfig, intr: CameraIntrinsics, depth0: np.ndarray | None = None
) -> LearnedField:
    shape = FieldShape.from_config(config.model, num_components=2)
    weights = FieldWeights.init(shape, rng_for(0, "test", "field"))
    cond = ConditioningState.free(shape, config.model.feature_grid, rng_for(0, "test", "cond"))
    return LearnedField(weights, cond, intr, BOUNDS, depth0)


def _points(n: int, seed: int = 0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.column_stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n), rng.uniform(-6, -2, n)])


class TestEmbedding:
    """Tests for the Fourier embedding and FiLM."""

    def test_embed_layout(self) -> None:
        p = np.array([[0.25, -0.5, 0.1]])
        out = fourier_embed(p, 2).value
        assert out.shape == (1, embed_dim(2))
        np.testing.assert_allclose(out[0, :3], p[0])
        np.testing.assert_allclose(out[0, 3:6], np.sin(np.pi * p[0]))
        np.testing.assert_allclose(out[0, 6:9], np.cos(np.pi * p[0]))
        np.testing.assert_allclose(out[0, 9:12], np.sin(2.0 * np.pi * p[0]))

    def test_modulate(self) -> None:
        out = modulate(np.ones((2, 3)), [1.0, 2.0, 3.0], [0.0, 0.5, 0.0])
        np.testing.assert_allclose(out.value, [[1.0, 2.5, 3.0], [1.0, 2.5, 3.0]])

    def test_modulate_shape_mismatch(self) -> None:
        with pytest.raises(ShapeMismatch):
            modulate(np.ones((2, 3)), np.ones(2), np.zeros(3))

    def test_film_is_identity_at_init(self, small_config: RunConfig) -> None:
        """The zero projection with γ offset by one leaves h unchanged for any ξ."""
        shape = FieldShape.from_config(small_config.model, num_components=2)
        weights = FieldWeights.init(shape, rng_for(0, "test", "film"))
        rng = np.random.default_rng(4)
        h = rng.normal(size=(5, shape.hidden_width))
        xi = rng.normal(size=shape.embedding_dim)
        for layer in range(shape.hidden_layers):
            np.testing.assert_array_equal(film(h, xi, weights, layer).value, h)

    def test_film_of_zero_is_beta(self, small_config: RunConfig) -> None:
        shape = FieldShape.from_config(small_config.model, num_components=2)
        weights = FieldWeights.init(shape, rng_for(0, "test", "film"))
        rng = np.random.default_rng(5)
        weights["film_out.w"].value[...] = rng.normal(size=weights["film_out.w"].shape)
        weights["film_out.b"].value[...] = rng.normal(size=weights["film_out.b"].shape)
        xi = rng.normal(size=shape.embedding_dim)
        h = np.zeros((3, shape.hidden_width))
        _, beta = film_coefficients(weights, xi)[0]
        out = film(h, xi, weights, 0).value
        np.testing.assert_allclose(out, np.broadcast_to(beta.value, h.shape), atol=1e-15)
        with pytest.raises(ShapeMismatch):
            film(h, xi, weights, shape.hidden_layers)

    def test_bounds_normalize(self) -> None:
        out = BOUNDS.normalize([[3.0, 0.0, -4.0], [0.0, -3.0, -7.0]]).value
        np.testing.assert_allclose(out, [[1.0, 0.0, 0.0], [0.0, -1.0, -1.0]])
        assert BOUNDS.contains([[0.0, 0.0, -1.0]])
        assert not BOUNDS.contains([[0.0, 0.0, 0.5]])


class TestBilinear:
    """Tests for bilinear_sample."""

    def _linear_grid(self) -> np.ndarray:
        h, w = 4, 5
        ys, xs = np.mgrid[0:h, 0:w]
        return np.stack([xs / (w - 1.0), ys / (h - 1.0)], axis=-1).astype(np.float64)

    def test_reproduces_linear_function(self) -> None:
        """Bilinear interpolation of a linear ramp is exact."""
        uv = np.random.default_rng(0).uniform(0, 1, size=(30, 2))
        out = bilinear_sample(self._linear_grid(), uv).value
        np.testing.assert_allclose(out, uv, atol=1e-12)

    def test_hits_nodes_exactly(self) -> None:
        grid = np.random.default_rng(1).normal(size=(3, 3, 2))
        out = bilinear_sample(grid, [[0.0, 0.0], [1.0, 1.0], [0.5, 0.0]]).value
        np.testing.assert_allclose(out, [grid[0, 0], grid[2, 2], grid[0, 1]])

    def test_clamps_or_raises_outside(self) -> None:
        grid = self._linear_grid()
        out = bilinear_sample(grid, [[1.5, -0.5]]).value
        np.testing.assert_allclose(out, [[1.0, 0.0]])
        with pytest.raises(OutOfRange):
            bilinear_sample(grid, [[1.5, 0.5]], mode="error")

    def test_gradient_in_grid_and_uv(self) -> None:
        grid = np.random.default_rng(2).normal(size=(4, 4, 3))
        uv = np.random.default_rng(3).uniform(0.05, 0.95, size=(6, 2))
        assert ad.finite_diff_check(lambda g: ad.tsum(bilinear_sample(g, uv) ** 2), grid) < 1e-6
        assert ad.finite_diff_check(lambda q: ad.tsum(bilinear_sample(grid, q) ** 2), uv) < 1e-6

    def test_rejects_degenerate_grid(self) -> None:
        with pytest.raises(ShapeMismatch):
            bilinear_sample(np.ones((1, 4, 2)), [[0.5, 0.5]])


class TestLearnedField:
    """Tests for LearnedField."""

    def test_outputs_are_in_range(
        self, small_config: RunConfig, small_intr: CameraIntrinsics
    ) -> None:
        field = _field(small_config, small_intr)
        sample = field(ad.constant(_points(40).reshape(8, 5, 3)))
        assert sample.density.shape == (8, 5)
        assert sample.color.shape == (8, 5, 3)
        assert sample.weights.shape == (8, 5, 2)
        assert np.all(sample.density.value >= 0.0)
        assert np.all((sample.color.value > 0.0) & (sample.color.value < 1.0))
        np.testing.assert_allclose(sample.weights.value.sum(axis=-1), 1.0)

    def test_film_starts_as_identity(
        self, small_config: RunConfig, small_intr: CameraIntrinsics
    ) -> None:
        field = _field(small_config, small_intr)
        for gamma, beta in film_coefficients(field.weights, field.cond.xi):
            np.testing.assert_array_equal(gamma.value, 1.0)
            np.testing.assert_array_equal(beta.value, 0.0)

    def test_depth_prior_lookup(
        self, small_config: RunConfig, small_intr: CameraIntrinsics
    ) -> None:
        """A constant depth map reads back as that constant anywhere in view."""
        depth0 = np.full((small_intr.height, small_intr.width), 4.5)
        field = _field(small_config, small_intr, depth0)
        looked_up = field.depth_at(ad.constant(_points(10)))
        np.testing.assert_allclose(looked_up.value, 4.5)
        no_map = _field(small_config, small_intr).depth_at(ad.constant(_points(3)))
        np.testing.assert_allclose(no_map.value, BOUNDS.center_distance)

    def test_gradients_match_finite_differences(
        self, small_config: RunConfig, small_intr: CameraIntrinsics
    ) -> None:
        field = _field(small_config, small_intr, np.full((16, 16), 4.0))
        params = {**field.weights.parameters(), **field.cond.parameters()}
        for p in params.values():
            p.value += rng_for(1, "jitter").normal(0.0, 0.05, size=p.value.shape)
        pts = ad.constant(_points(12))

        def loss() -> ad.DiffTensor:
            s = field(pts)
            return ad.tsum(s.density) + ad.tsum(s.color * s.color) + ad.tsum(s.weights[:, 1])

        picks = [(name, 0) for name in sorted(params)]
        _, rows = ad.finite_diff_check_params(loss, params, picks)
        assert len(rows) == len(params)
        analytic = np.array([r[2] for r in rows])
        numeric = np.array([r[3] for r in rows])
        np.testing.assert_allclose(analytic, numeric, rtol=1e-4, atol=1e-8)

    def test_detached_has_no_tape(
        self, small_config: RunConfig, small_intr: CameraIntrinsics
    ) -> None:
        field = _field(small_config, small_intr)
        pts = ad.constant(_points(5))
        live, frozen = field(pts), field.detached()(pts)
        assert live.density.requires_grad
        assert not frozen.density.requires_grad
        np.testing.assert_array_equal(live.density.value, frozen.density.value)
