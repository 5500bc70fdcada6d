"""Training objective: reconstruction likelihood, KL term and the five regularizers."""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field, fields

import numpy as np
from numpy.typing import ArrayLike
from scipy import ndimage

from . import autodiff as ad
from .autodiff import Array, DiffTensor, TensorLike
from .config import LossConfig
from .errors import NonFinite, OutOfBounds, OutOfRange, ShapeMismatch
from .field import bilinear_sample
from .geometry import (
    CameraIntrinsics,
    CameraTrack,
    MotionTrack,
    project_points,
    rays_for_pixels,
    transform_points,
)

SLAB_HALF_WIDTH = 0.0125
SLAB_NEAR_FLOOR = 0.01
SLAB_TARGET = 0.975
SLAB_WITHIN_WEIGHT = 6.5

# 5x5 binomial approximation of a Gaussian and the central difference.
_BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0
GAUSS_5X5 = np.outer(_BINOMIAL, _BINOMIAL)
CENTRAL_DIFF = np.array([-0.5, 0.0, 0.5])


# ---------------------------------------------------------------------------------------------
# Likelihood and KL


def recon_nll(pred: TensorLike, target: ArrayLike, sigma: float) -> DiffTensor:
    """Gaussian negative log-likelihood averaged per pixel channel, constant included."""
    pred = ad.as_tensor(pred)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ShapeMismatch(f"prediction {pred.shape} vs target {target.shape}")
    if pred.size == 0:
        return ad.constant(0.0)
    resid = pred - target
    const = math.log(sigma * math.sqrt(2.0 * math.pi))
    return ad.mean(resid * resid) * (1.0 / (2.0 * sigma * sigma)) + const


def kl_diag_gauss(mu: TensorLike, logvar: TensorLike) -> DiffTensor:
    """KL(N(μ, diag e^logvar) || N(0, I))."""
    mu, logvar = ad.as_tensor(mu), ad.as_tensor(logvar)
    if mu.shape != logvar.shape:
        raise ShapeMismatch(f"μ {mu.shape} vs logvar {logvar.shape}")
    return ad.tsum(mu * mu + ad.exp(logvar) - 1.0 - logvar) * 0.5


def beta_schedule(step: int, anneal_steps: int, beta_max: float) -> float:
    """Linear warm-up of the KL weight from 0 to ``beta_max``."""
    if anneal_steps <= 0:
        raise OutOfRange(f"anneal_steps must be positive, got {anneal_steps}")
    return beta_max * min(1.0, step / anneal_steps)


# ---------------------------------------------------------------------------------------------
# Regularizers


def reg_l1_velocity(motion: MotionTrack) -> DiffTensor:
    """Mean over components and frame steps of the L1 norm of the translation change."""
    if motion.num_frames < 2:
        raise OutOfRange("velocity regularizer needs at least one future frame")
    trans = motion.translations
    step = trans[1:] - trans[:-1]
    return ad.mean(ad.tsum(ad.tabs(step), axis=-1))


def _gray(guide: ArrayLike) -> Array:
    g = np.asarray(guide, dtype=np.float64)
    return g.mean(axis=-1) if g.ndim == 3 else g


def edge_weights(guide: ArrayLike, zeta: float) -> tuple[Array, Array]:
    """Per-pixel attenuation exp(-ζ |D ∗ K_G ∗ guide|) along x and y, shape (H, W) each."""
    smooth = ndimage.correlate(_gray(guide), GAUSS_5X5, mode="reflect")
    gx = ndimage.correlate1d(smooth, CENTRAL_DIFF, axis=1, mode="reflect")
    gy = ndimage.correlate1d(smooth, CENTRAL_DIFF, axis=0, mode="reflect")
    return np.exp(-zeta * np.abs(gx)), np.exp(-zeta * np.abs(gy))


def tv_edge_from_weights(mask: TensorLike, wx: ArrayLike, wy: ArrayLike) -> DiffTensor:
    """Edge-weighted anisotropic TV-L1 of a mask (h, w) or (h, w, J), borders excluded.

    Channels are summed; the result is a mean over the (h - 2) x (w - 2) interior pixels.
    """
    m = ad.as_tensor(mask)
    wx, wy = np.asarray(wx), np.asarray(wy)
    if m.shape[:2] != wx.shape or wx.shape != wy.shape:
        raise ShapeMismatch(f"mask {m.shape} vs edge weights {wx.shape}, {wy.shape}")
    h, w = wx.shape
    if h < 3 or w < 3:
        return ad.constant(0.0)
    dx = (m[1:-1, 2:] - m[1:-1, :-2]) * 0.5
    dy = (m[2:, 1:-1] - m[:-2, 1:-1]) * 0.5
    if m.ndim == 3:
        cx, cy = wx[1:-1, 1:-1, None], wy[1:-1, 1:-1, None]
    else:
        cx, cy = wx[1:-1, 1:-1], wy[1:-1, 1:-1]
    total = ad.tsum(ad.tabs(dx) * cx) + ad.tsum(ad.tabs(dy) * cy)
    return total * (1.0 / ((h - 2) * (w - 2)))


def reg_tv_edge(mask: TensorLike, guide: ArrayLike, zeta: float) -> DiffTensor:
    m = ad.as_tensor(mask)
    g = _gray(guide)
    if m.shape[:2] != g.shape:
        raise ShapeMismatch(f"mask {m.shape} vs guide {g.shape}")
    wx, wy = edge_weights(g, zeta)
    return tv_edge_from_weights(m, wx, wy)


def reg_depth_slab(
    termination: TensorLike,
    distances: ArrayLike,
    depth_prior: ArrayLike,
    valid: ArrayLike | None = None,
) -> DiffTensor:
    """Density/depth consistency around a slab of half-width 0.0125·d.

    Per ray: Σ_nearer R[p - 0.01] + (6.5 / W) Σ_within R[0.975 - p], with W the within-slab
    sample count on that ray and samples on the slab boundary counted as within. Samples beyond
    the slab are free. The value is the mean over rays marked ``valid``.
    """
    p = ad.as_tensor(termination)
    dist = np.asarray(distances, dtype=np.float64)
    d = np.asarray(depth_prior, dtype=np.float64).reshape(-1, 1)
    if p.shape != dist.shape or d.shape[0] != dist.shape[0]:
        raise ShapeMismatch(f"termination {p.shape}, distances {dist.shape}, depth {d.shape}")
    ok = np.ones(dist.shape[0], dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
    if not np.any(ok):
        return ad.constant(0.0)
    lo, hi = d * (1.0 - SLAB_HALF_WIDTH), d * (1.0 + SLAB_HALF_WIDTH)
    nearer = (dist < lo) & ok[:, None]
    within = (dist >= lo) & (dist <= hi) & ok[:, None]
    count = within.sum(axis=1, keepdims=True)
    scale = np.where(count > 0, SLAB_WITHIN_WEIGHT / np.maximum(count, 1), 0.0)
    near_pen = ad.relu(p - SLAB_NEAR_FLOOR) * nearer
    within_pen = ad.relu(SLAB_TARGET - p) * (within * scale)
    return ad.tsum(near_pen + within_pen) * (1.0 / int(ok.sum()))


# ---------------------------------------------------------------------------------------------
# Keypoints


@dataclass(frozen=True)
class KeypointTrack:
    """One tracked point: pixel location per frame (NaN where absent).

    ``depth0`` is the distance along the frame-0 ray to the tracked point when known;
    ``component`` is the motion component it belongs to (0-based) when known.
    """

    track_id: int
    positions: Array
    depth0: float = math.nan
    component: int = -1

    def present(self, t: int) -> bool:
        return bool(np.all(np.isfinite(self.positions[t])))

    @property
    def num_frames(self) -> int:
        return int(self.positions.shape[0])


def validate_tracks(tracks: Sequence[KeypointTrack], intr: CameraIntrinsics) -> None:
    for track in tracks:
        pos = track.positions
        seen = np.all(np.isfinite(pos), axis=-1)
        inside = (pos[seen, 0] >= 0) & (pos[seen, 0] <= intr.width)
        inside &= (pos[seen, 1] >= 0) & (pos[seen, 1] <= intr.height)
        if not np.all(inside):
            raise OutOfBounds(f"keypoint track {track.track_id} leaves the image")


@dataclass(frozen=True)
class KeypointPairs:
    """Keypoints present in both frame 0 and frame t."""

    t: int
    k0: Array
    kt: Array
    depth0: Array

    def __len__(self) -> int:
        return int(self.k0.shape[0])


def keypoint_pairs(tracks: Sequence[KeypointTrack], t: int) -> KeypointPairs:
    chosen = [tr for tr in tracks if tr.num_frames > t and tr.present(0) and tr.present(t)]
    if not chosen:
        empty = np.zeros((0, 2))
        return KeypointPairs(t, empty, empty, np.zeros(0))
    return KeypointPairs(
        t,
        np.stack([tr.positions[0] for tr in chosen]),
        np.stack([tr.positions[t] for tr in chosen]),
        np.array([tr.depth0 for tr in chosen]),
    )


def keypoint_flow_residual(pairs: KeypointPairs, predicted: TensorLike) -> DiffTensor:
    """Squared norm of (k_t - k_0) - F_t(k_0) per pair, shape (P,)."""
    pred = ad.as_tensor(predicted)
    if pred.shape != pairs.k0.shape:
        raise ShapeMismatch(f"predicted flow {pred.shape} vs {pairs.k0.shape} keypoints")
    resid = (pairs.kt - pairs.k0) - pred
    return ad.tsum(resid * resid, axis=-1)


def flow_at(flow_map: TensorLike, pixels: Array) -> DiffTensor:
    """Bilinear lookup of an (H, W, 2) flow map at pixel coordinates (P, 2)."""
    fm = ad.as_tensor(flow_map)
    h, w = fm.shape[0], fm.shape[1]
    uv = (pixels - 0.5) / np.array([w - 1.0, h - 1.0])
    return bilinear_sample(fm, np.clip(uv, 0.0, 1.0))


def reg_keypoint_flow(
    tracks: Sequence[KeypointTrack], flow_maps: Mapping[int, TensorLike]
) -> DiffTensor:
    """Mean squared flow residual over all (keypoint, t) pairs; F_t read bilinearly at k_0."""
    residuals = []
    for t, flow_map in sorted(flow_maps.items()):
        pairs = keypoint_pairs(tracks, t)
        if len(pairs):
            residuals.append(keypoint_flow_residual(pairs, flow_at(flow_map, pairs.k0)))
    if not residuals:
        return ad.constant(0.0)
    return ad.mean(ad.concat(residuals, axis=0))


def reproj_errors(
    pairs: KeypointPairs,
    depth0: ArrayLike,
    camera: CameraTrack,
    motion: MotionTrack,
    intr: CameraIntrinsics,
) -> tuple[DiffTensor, Array]:
    """Per pair, the smallest squared reprojection error over components.

    Returns the errors of the usable pairs and a mask over all pairs of those that were usable
    (positive depth and at least one component projecting in front of the camera). Ties pick the
    lowest component index and only the chosen branch receives gradient.
    """
    depth = np.asarray(depth0, dtype=np.float64).reshape(-1)
    rays = rays_for_pixels(camera.pose(0), intr, pairs.k0)
    lifted = rays.origins + rays.directions * depth[:, None]
    rotations, translations = motion.frame(pairs.t)
    moved = transform_points(rotations, translations, lifted)
    uv, in_front = project_points(camera.pose(pairs.t), intr, moved)
    diff = uv - pairs.kt[:, None, :]
    err = ad.tsum(diff * diff, axis=-1)
    usable = np.where(in_front, err.value, np.inf)
    ok = np.isfinite(depth) & (depth > 0) & np.any(in_front, axis=-1)
    best = np.argmin(usable, axis=-1)
    rows = np.nonzero(ok)[0]
    return err[rows, best[rows]], ok


def reg_keypoint_reproj(
    tracks: Sequence[KeypointTrack],
    camera: CameraTrack,
    motion: MotionTrack,
    intr: CameraIntrinsics,
    depth_map0: ArrayLike | None = None,
) -> tuple[DiffTensor, int]:
    """Mean over (keypoint, t) pairs of min_j ‖k_t - π_t T_t^j π_0^-1 k_0‖².

    Frame-0 depth comes from each track's ``depth0``, or from ``depth_map0`` at k_0 when the
    track carries none. Returns the value and the number of pairs skipped because the point fell
    behind a camera or had no usable depth.
    """
    errors = []
    skipped = 0
    for t in range(1, camera.num_frames):
        pairs = keypoint_pairs(tracks, t)
        if not len(pairs):
            continue
        depth = pairs.depth0.copy()
        if depth_map0 is not None:
            dm = np.asarray(depth_map0, dtype=np.float64)
            cols = np.clip(pairs.k0[:, 0].astype(np.intp), 0, dm.shape[1] - 1)
            rows = np.clip(pairs.k0[:, 1].astype(np.intp), 0, dm.shape[0] - 1)
            missing = ~np.isfinite(depth)
            depth[missing] = dm[rows[missing], cols[missing]]
        err, ok = reproj_errors(pairs, depth, camera, motion, intr)
        skipped += int((~ok).sum())
        if err.size:
            errors.append(err)
    if not errors:
        return ad.constant(0.0), skipped
    return ad.mean(ad.concat(errors, axis=0)), skipped


# ---------------------------------------------------------------------------------------------
# Total objective


def _zero() -> DiffTensor:
    return ad.constant(0.0)


@dataclass(frozen=True)
class LossBreakdown:
    """Individual objective terms; ``beta`` is the KL weight in effect."""

    recon_nll: DiffTensor = field(default_factory=_zero)
    recon_x0: DiffTensor = field(default_factory=_zero)
    kl: DiffTensor = field(default_factory=_zero)
    beta: float = 0.0
    reg_velocity: DiffTensor = field(default_factory=_zero)
    reg_tv: DiffTensor = field(default_factory=_zero)
    reg_depth_slab: DiffTensor = field(default_factory=_zero)
    reg_kp_flow: DiffTensor = field(default_factory=_zero)
    reg_kp_reproj: DiffTensor = field(default_factory=_zero)

    def terms(self) -> dict[str, DiffTensor]:
        return {f.name: getattr(self, f.name) for f in fields(self) if f.name != "beta"}

    def as_floats(self) -> dict[str, float]:
        out = {name: float(t.item()) for name, t in self.terms().items()}
        out["beta"] = self.beta
        return out


LOG_COLUMNS = (
    "step",
    "recon_nll",
    "recon_x0",
    "kl",
    "beta",
    "reg_velocity",
    "reg_tv",
    "reg_depth_slab",
    "reg_kp_flow",
    "reg_kp_reproj",
    "total",
)


def total_loss(parts: LossBreakdown, weights: LossConfig, step: int | None = None) -> DiffTensor:
    """recon + x0 weight·recon_x0 + β·KL + Σ strength·regularizer; raises NonFinite."""
    values = parts.as_floats()
    bad = {k: v for k, v in values.items() if not math.isfinite(v)}
    if bad:
        raise NonFinite("non-finite loss terms", step=step, terms=values)
    total = (
        parts.recon_nll
        + parts.recon_x0 * weights.x0_weight
        + parts.kl * parts.beta
        + parts.reg_velocity * weights.l1_velocity_strength
        + parts.reg_tv * weights.tv_strength
        + parts.reg_depth_slab * weights.depth_consistency_strength
        + parts.reg_kp_flow * weights.keypoint_flow_strength
        + parts.reg_kp_reproj * weights.keypoint_depth_strength
    )
    if not math.isfinite(total.item()):
        raise NonFinite("non-finite total loss", step=step, terms=values)
    return total


def log_row(step: int, parts: LossBreakdown, total: DiffTensor) -> dict[str, float]:
    row: dict[str, float] = {"step": step, **parts.as_floats(), "total": float(total.item())}
    return {k: row[k] for k in LOG_COLUMNS}
