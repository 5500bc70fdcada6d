"""Ray sampling and volume rendering.

Static scenes use standard quadrature with V_k = exp(-Σ_{k'<k} ρ δ). Dynamic scenes pull
every sample back into frame 0 once per motion component and combine the per-component
opacities α^j = 1 - exp(-ρ(p^j) δ) weighted by ω_j(p^j), either as a mixture (the default) or
as the product 1 - Π_j (1 - ω_j α^j). Rays that do not saturate composite over black.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import ArrayLike

from . import autodiff as ad
from .autodiff import Array, DiffTensor
from .config import RenderConfig
from .errors import InvalidRange, OutOfBounds, ShapeMismatch
from .field import SceneField, SceneSample
from .geometry import (
    CameraIntrinsics,
    CameraTrack,
    MotionTrack,
    Ray,
    RayBatch,
    inverse_transform_points,
    pixel_grid,
    project_points,
    rays_for_pixels,
    transform_points,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class RaySamples:
    """Sample distances along rays (..., K) and their spacings.

    δ_k is the gap to the next sample; the last sample extends to ``far``. Directions are unit
    length, so distances and spacings are in scene units.
    """

    distances: Array
    deltas: Array

    @classmethod
    def from_distances(
        cls, distances: ArrayLike, far: float, allow_coincident: bool = False
    ) -> RaySamples:
        """Spacings of sorted distances; coincident samples get zero width when allowed."""
        d = np.asarray(distances, dtype=np.float64)
        if d.shape[-1] < 2:
            raise InvalidRange(f"need at least 2 samples per ray, got {d.shape[-1]}")
        tail = np.full((*d.shape[:-1], 1), far)
        deltas = np.diff(np.concatenate([d, tail], axis=-1), axis=-1)
        if np.any(deltas < 0) or np.any(deltas[..., -1] <= 0):
            raise InvalidRange("sample distances must not decrease and must stay below far")
        if not allow_coincident and np.any(deltas == 0):
            raise InvalidRange("sample distances must increase strictly")
        return cls(d, deltas)

    @property
    def num_samples(self) -> int:
        return int(self.distances.shape[-1])

    def points(self, ray: Ray) -> Array:
        """Sample points of a single ray, shape (K, 3)."""
        return ray.origin + self.distances[..., None] * ray.direction

    def points_along(self, rays: RayBatch) -> DiffTensor:
        """Sample points (N, K, 3) of a ray batch; differentiable in the ray poses."""
        d = self.distances.reshape(len(rays), -1, 1)
        origins = ad.reshape(rays.origins, (len(rays), 1, 3))
        directions = ad.reshape(rays.directions, (len(rays), 1, 3))
        return origins + directions * d


def _stratified(lo: Array, hi: Array, count: int, rng: np.random.Generator | None) -> Array:
    """``count`` stratified samples per row between lo and hi (midpoints without an rng)."""
    if rng is None:
        offsets = np.full((lo.shape[0], count), 0.5)
    else:
        offsets = rng.uniform(0.0, 1.0, size=(lo.shape[0], count))
    width = (hi - lo)[:, None] / count
    return lo[:, None] + (np.arange(count)[None, :] + offsets) * width


def sample_uniform(
    num_rays: int,
    num_samples: int,
    near: float,
    far: float,
    rng: np.random.Generator | None = None,
) -> RaySamples:
    if not 0 <= near < far:
        raise InvalidRange(f"need 0 <= near < far, got {near}, {far}")
    lo = np.full(num_rays, near)
    hi = np.full(num_rays, far)
    return RaySamples.from_distances(_stratified(lo, hi, num_samples, rng), far)


def sample_depth_guided(
    depth_prior: ArrayLike,
    num_samples: int,
    near: float,
    far: float,
    margin: float,
    rng: np.random.Generator | None = None,
) -> RaySamples:
    """Thirds of the samples before, around and beyond each ray's depth prior.

    ``depth_prior`` is a scalar or an (N,) vector; the result has shape (N, K) (N = 1 for a
    scalar). Requires near < d(1 - margin) <= d(1 + margin) < far and K divisible by 3. At
    margin 0 the middle band collapses onto the prior depth as zero-width samples.
    """
    d = np.atleast_1d(np.asarray(depth_prior, dtype=np.float64))
    if num_samples < 3 or num_samples % 3:
        raise InvalidRange(f"samples per ray must be a positive multiple of 3, got {num_samples}")
    if not 0.0 <= margin < 1.0:
        raise InvalidRange(f"depth margin must lie in [0, 1), got {margin}")
    lower, upper = d * (1.0 - margin), d * (1.0 + margin)
    bad = ~np.isfinite(d) | (lower <= near) | (upper >= far)
    if np.any(bad):
        first = float(d[np.argmax(bad)])
        raise InvalidRange(
            f"{int(bad.sum())} depth priors outside ({near}, {far}) with margin {margin}, "
            f"e.g. {first}"
        )
    per_band = num_samples // 3
    bands = [
        _stratified(np.full_like(d, near), lower, per_band, rng),
        _stratified(lower, upper, per_band, rng),
        _stratified(upper, np.full_like(d, far), per_band, rng),
    ]
    return RaySamples.from_distances(
        np.concatenate(bands, axis=-1), far, allow_coincident=margin == 0.0
    )


def clamp_depth_prior(depth: ArrayLike, config: RenderConfig) -> Array:
    """Move depth priors into the range depth-guided sampling accepts.

    Missing priors (zero, negative or non-finite, as on background pixels) go to the far end.
    """
    d = np.asarray(depth, dtype=np.float64)
    lo = config.near / (1.0 - config.depth_margin) * 1.001
    hi = config.far / (1.0 + config.depth_margin) * 0.999
    valid = np.isfinite(d) & (d > 0)
    return np.where(valid, np.clip(np.where(valid, d, hi), lo, hi), hi)


def sample_rays(
    depth_prior: Array | None,
    num_rays: int,
    config: RenderConfig,
    rng: np.random.Generator | None,
) -> RaySamples:
    rng = rng if config.jitter else None
    if depth_prior is None:
        return sample_uniform(num_rays, config.samples_per_ray, config.near, config.far, rng)
    return sample_depth_guided(
        clamp_depth_prior(depth_prior, config),
        config.samples_per_ray,
        config.near,
        config.far,
        config.depth_margin,
        rng,
    )


# ---------------------------------------------------------------------------------------------
# Compositing


@dataclass(frozen=True)
class StaticPixels:
    color: DiffTensor
    alpha: DiffTensor
    depth: DiffTensor


def _expected_depth(weights: DiffTensor, distances: Array, alpha: DiffTensor) -> DiffTensor:
    total = ad.tsum(weights * distances, axis=-1)
    safe = ad.where(alpha.value > 0, alpha, 1.0)
    return ad.where(alpha.value > 0, total / safe, 0.0)


def render_static(sample: SceneSample, samples: RaySamples) -> StaticPixels:
    """Quadrature over samples (..., K): color, alpha and expected depth per ray."""
    if sample.density.shape != samples.deltas.shape:
        raise ShapeMismatch(f"densities {sample.density.shape} vs samples {samples.deltas.shape}")
    optical = sample.density * samples.deltas
    before = ad.cumsum(optical, axis=-1) - optical
    visibility = ad.exp(-before)
    alpha_k = 1.0 - ad.exp(-optical)
    w = visibility * alpha_k
    color = ad.tsum(ad.reshape(w, (*w.shape, 1)) * sample.color, axis=-2)
    alpha = ad.tsum(w, axis=-1)
    return StaticPixels(color, alpha, _expected_depth(w, samples.distances, alpha))


def exclusive_transmittance(alpha: DiffTensor) -> DiffTensor:
    """V_k = Π_{k'<k} (1 - α_{k'}) along the last axis."""
    survive = 1.0 - alpha
    ones = ad.constant(np.ones((*alpha.shape[:-1], 1)))
    return ad.cumprod(ad.concat([ones, survive[..., :-1]], axis=-1), axis=-1)


def combine_opacity(alpha_j: DiffTensor, omega_j: DiffTensor, mode: str) -> DiffTensor:
    """Per-sample opacity from per-component opacities (..., J) and weights (..., J)."""
    weighted = omega_j * alpha_j
    if mode == "product":
        return 1.0 - ad.cumprod(1.0 - weighted, axis=-1)[..., -1]
    return ad.tsum(weighted, axis=-1)


@dataclass(frozen=True)
class PixelBatch:
    """Rendered values for N rays plus the per-sample quantities the regularizers need."""

    rgb: DiffTensor
    alpha: DiffTensor
    depth: DiffTensor
    segmentation: DiffTensor
    termination: DiffTensor
    samples: RaySamples
    depth_prior: Array | None


def _diagonal(weights: DiffTensor) -> DiffTensor:
    """ω_j evaluated at p^j: the diagonal of (..., J, J) field weights."""
    j = weights.shape[-1]
    return ad.tsum(weights * np.eye(j), axis=-1)


def composite_components(
    density: DiffTensor,
    color: DiffTensor,
    omega: DiffTensor,
    samples: RaySamples,
    opacity_mode: str = "mixture",
) -> tuple[DiffTensor, DiffTensor, DiffTensor, DiffTensor]:
    """Composite densities (N, K, J), colors (N, K, J, 3) and weights (N, K, J).

    Returns rgb (N, 3), alpha (N,), expected depth (N,) and segmentation (N, J).
    """
    deltas = samples.deltas[..., None]
    alpha_j = 1.0 - ad.exp(-(density * deltas))
    alpha_k = combine_opacity(alpha_j, omega, opacity_mode)
    visibility = exclusive_transmittance(alpha_k)
    contrib = ad.reshape(visibility, (*visibility.shape, 1)) * omega * alpha_j
    rgb = ad.tsum(ad.reshape(contrib, (*contrib.shape, 1)) * color, axis=(-3, -2))
    segmentation = ad.tsum(contrib, axis=-2)
    w = visibility * alpha_k
    alpha = ad.tsum(w, axis=-1)
    return rgb, alpha, _expected_depth(w, samples.distances, alpha), segmentation


def termination_probability(density: DiffTensor, omega: DiffTensor) -> DiffTensor:
    """Probability of terminating within unit distance, 1 - Π_j (1 - (1 - e^-ρ^j) ω_j)."""
    unit_alpha = 1.0 - ad.exp(-density)
    return 1.0 - ad.cumprod(1.0 - unit_alpha * omega, axis=-1)[..., -1]


def render_rays(
    field: SceneField,
    camera: CameraTrack,
    motion: MotionTrack,
    t: int,
    intr: CameraIntrinsics,
    pixels: ArrayLike,
    config: RenderConfig,
    depth_prior: Array | None = None,
    rng: np.random.Generator | None = None,
) -> PixelBatch:
    """Render frame ``t`` at the given pixel centers (N, 2)."""
    if not 0 <= t < camera.num_frames:
        raise OutOfBounds(f"frame {t} outside 0..{camera.num_frames - 1}")
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    rays = rays_for_pixels(camera.pose(t), intr, px)
    samples = sample_rays(depth_prior, len(rays), config, rng)
    world = samples.points_along(rays)
    rotations, translations = motion.frame(t)
    frame0 = inverse_transform_points(rotations, translations, world)
    sample = field(frame0)
    omega = _diagonal(sample.weights)
    rgb, alpha, depth, seg = composite_components(
        sample.density, sample.color, omega, samples, config.opacity_mode
    )
    return PixelBatch(
        rgb=rgb,
        alpha=alpha,
        depth=depth,
        segmentation=seg,
        termination=termination_probability(sample.density, omega),
        samples=samples,
        depth_prior=None if depth_prior is None else clamp_depth_prior(depth_prior, config),
    )


def render_dynamic(
    field: SceneField,
    camera: CameraTrack,
    motion: MotionTrack,
    t: int,
    intr: CameraIntrinsics,
    q: ArrayLike,
    config: RenderConfig,
    depth_prior: float | None = None,
    rng: np.random.Generator | None = None,
) -> PixelBatch:
    """Render one pixel ``q`` of frame ``t``."""
    if not intr.contains(q):
        raise OutOfBounds(f"pixel {np.asarray(q).tolist()} outside {intr.width}x{intr.height}")
    prior = None if depth_prior is None else np.array([depth_prior], dtype=np.float64)
    return render_rays(field, camera, motion, t, intr, [q], config, prior, rng)


def render_flow_rays(
    field: SceneField,
    camera: CameraTrack,
    motion: MotionTrack,
    t: int,
    intr: CameraIntrinsics,
    pixels: ArrayLike,
    config: RenderConfig,
    depth_prior: Array | None = None,
    rng: np.random.Generator | None = None,
) -> DiffTensor:
    """Flow (N, 2) from frame-0 pixels to frame ``t``, composited with frame-0 visibility."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    rays = rays_for_pixels(camera.pose(0), intr, px)
    samples = sample_rays(depth_prior, len(rays), config, rng)
    points = samples.points_along(rays)
    sample = field(points)
    alpha_k = 1.0 - ad.exp(-(sample.density * samples.deltas))
    visibility = exclusive_transmittance(alpha_k)
    w = ad.reshape(visibility * alpha_k, (*alpha_k.shape, 1)) * sample.weights
    rotations, translations = motion.frame(t)
    moved = transform_points(rotations, translations, points)
    uv, in_front = project_points(camera.pose(t), intr, moved)
    offset = uv - ad.constant(px[:, None, None, :])
    offset = ad.where(in_front[..., None], offset, 0.0)
    return ad.tsum(ad.reshape(w, (*w.shape, 1)) * offset, axis=(1, 2))


# ---------------------------------------------------------------------------------------------
# Full images


@dataclass
class FrameBuffer:
    """Per-pixel channels of one rendered frame; ``valid`` marks rendered pixels."""

    width: int
    height: int
    rgb: Array
    depth: Array
    flow: Array
    segmentation: Array
    alpha: Array
    valid: Array

    @classmethod
    def empty(cls, width: int, height: int, num_components: int) -> FrameBuffer:
        return cls(
            width,
            height,
            rgb=np.zeros((height, width, 3)),
            depth=np.zeros((height, width)),
            flow=np.zeros((height, width, 2)),
            segmentation=np.zeros((height, width, num_components)),
            alpha=np.zeros((height, width)),
            valid=np.zeros((height, width), dtype=bool),
        )


def _detach_tracks(camera: CameraTrack, motion: MotionTrack) -> tuple[CameraTrack, MotionTrack]:
    cam = CameraTrack(
        ad.constant(camera.rotations.value),
        ad.constant(camera.translations.value),
        camera.kind,
        ad.constant(camera.params.value),
    )
    mot = MotionTrack(
        ad.constant(motion.rotations.value),
        ad.constant(motion.translations.value),
        motion.kind,
        ad.constant(motion.params.value),
    )
    return cam, mot


def render_image(
    field: SceneField,
    camera: CameraTrack,
    motion: MotionTrack,
    t: int,
    intr: CameraIntrinsics,
    config: RenderConfig,
    pixels: ArrayLike | None = None,
    depth_prior: Array | None = None,
    flow: bool = True,
    threads: int = 1,
) -> FrameBuffer:
    """Render frame ``t`` at ``pixels`` (default: every pixel) into a FrameBuffer.

    Chunks of ``config.chunk_rays`` rays are rendered on up to ``threads`` workers; the result
    does not depend on the worker count. Sampling is never jittered here. ``depth_prior`` is a
    full (H, W) map for frame ``t``; flow uses the same pixels as frame-0 locations.
    """
    field = field.detached()
    camera, motion = _detach_tracks(camera, motion)
    config_nojitter = replace(config, jitter=False)
    px = pixel_grid(intr) if pixels is None else np.asarray(pixels, dtype=np.float64)
    px = px.reshape(-1, 2)
    buf = FrameBuffer.empty(intr.width, intr.height, field.num_components)
    if px.shape[0] == 0:
        return buf
    cols = np.clip(np.floor(px[:, 0]).astype(np.intp), 0, intr.width - 1)
    rows = np.clip(np.floor(px[:, 1]).astype(np.intp), 0, intr.height - 1)
    prior = None if depth_prior is None else np.asarray(depth_prior)[rows, cols]
    chunk = max(1, config.chunk_rays)
    starts = list(range(0, px.shape[0], chunk))

    def work(start: int) -> tuple[int, list[Array]]:
        sl = slice(start, start + chunk)
        sub_prior = None if prior is None else prior[sl]
        batch = render_rays(
            field, camera, motion, t, intr, px[sl], config_nojitter, sub_prior
        )
        out = [batch.rgb.value, batch.depth.value, batch.segmentation.value, batch.alpha.value]
        if flow and t > 0:
            out.append(
                render_flow_rays(
                    field, camera, motion, t, intr, px[sl], config_nojitter, None
                ).value
            )
        else:
            out.append(np.zeros((len(px[sl]), 2)))
        return start, out

    if threads > 1 and len(starts) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, starts))
    else:
        results = [work(s) for s in starts]
    for start, (rgb, depth, seg, alpha, fl) in results:
        r, c = rows[start : start + chunk], cols[start : start + chunk]
        buf.rgb[r, c] = rgb
        buf.depth[r, c] = depth
        buf.segmentation[r, c] = seg
        buf.alpha[r, c] = alpha
        buf.flow[r, c] = fl
        buf.valid[r, c] = True
    logger.debug("rendered frame %d: %d pixels in %d chunks", t, px.shape[0], len(starts))
    return buf


def render_flow_map(
    field: SceneField,
    camera: CameraTrack,
    motion: MotionTrack,
    t: int,
    intr: CameraIntrinsics,
    config: RenderConfig,
    threads: int = 1,
) -> Array:
    """Flow over every frame-0 pixel, shape (H, W, 2)."""
    return render_image(field, camera, motion, t, intr, config, threads=threads).flow
