"""Adam, the fitting loops and checkpointing.

Three fits share one optimization loop:

* ``fit_static``: a J = 1 scene function with free conditioning, fitted to posed views of a
  static scene with depth-guided sampling driven by the oracle depth.
* ``fit_dynamic``: camera and component motion of one clip, optionally together with the scene
  function, or against the frozen analytic field of the scene the clip was rendered from.
* ``fit_vae``: the full conditional model (clip encoder, conditioning network, transform
  decoders and scene function) trained on the ELBO plus the regularizers.

Every random draw inside step ``n`` comes from ``rng_for(seed, "step", n)``, so a run resumed
from a checkpoint replays the uninterrupted run bit for bit.
"""

from __future__ import annotations

import logging
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Generic, Literal, TypeVar

import numpy as np
from numpy.typing import ArrayLike
from tqdm import tqdm

from . import autodiff as ad
from .autodiff import Array, DiffTensor
from .conditioning import ConditioningNet, TransformDecoder, pin_background
from .config import RunConfig
from .errors import ConfigError, NonFinite, ShapeMismatch
from .field import (
    ConditioningState,
    FieldShape,
    FieldWeights,
    LearnedField,
    SceneBounds,
    SceneField,
)
from .formats import Checkpoint, OptimizerSnapshot, load_checkpoint_file, save_checkpoint_file
from .geometry import (
    CameraIntrinsics,
    CameraKind,
    CameraTrack,
    MotionKind,
    MotionTrack,
    PoseSE3,
    camera_dof,
    camera_track_from_params,
    identity_motion,
    motion_dof,
    motion_track_from_params,
)
from .losses import (
    KeypointTrack,
    LossBreakdown,
    beta_schedule,
    edge_weights,
    keypoint_flow_residual,
    keypoint_pairs,
    kl_diag_gauss,
    log_row,
    recon_nll,
    reg_depth_slab,
    reg_keypoint_reproj,
    reg_l1_velocity,
    total_loss,
    tv_edge_from_weights,
)
from .render import FrameBuffer, render_flow_rays, render_image, render_rays
from .seeding import rng_for
from .synth import (
    ClipDataset,
    ClipSample,
    StaticDataset,
    SyntheticScene,
    augment_clip,
    oracle_field,
    track_from_poses,
)
from .vae import ClipEncoder, encode_clip, posterior_sample, sample_prior

logger = logging.getLogger(__name__)

M = TypeVar("M")
StepCallback = Callable[[int, dict[str, float], "AdamState"], None]


# ---------------------------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Bias-corrected Adam moments per named parameter."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)

    @classmethod
    def from_config(cls, config: RunConfig) -> AdamState:
        o = config.optim
        return cls(lr=o.learning_rate, beta1=o.adam_beta1, beta2=o.adam_beta2, eps=o.adam_eps)

    def snapshot(self) -> OptimizerSnapshot:
        return OptimizerSnapshot(
            self.step, self.lr, self.beta1, self.beta2, self.eps, dict(self.m), dict(self.v)
        )

    @classmethod
    def from_snapshot(cls, snap: OptimizerSnapshot) -> AdamState:
        return cls(snap.lr, snap.beta1, snap.beta2, snap.eps, snap.step, dict(snap.m), dict(snap.v))


def adam_step(
    state: AdamState, params: Mapping[str, Array], grads: Mapping[str, Array]
) -> tuple[dict[str, Array], AdamState]:
    """One Adam update; returns new parameter arrays and a new state, inputs untouched."""
    t = state.step + 1
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    new_params: dict[str, Array] = {}
    new_m: dict[str, Array] = dict(state.m)
    new_v: dict[str, Array] = dict(state.v)
    for name, value in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != value.shape:
            raise ShapeMismatch(f"gradient {g.shape} vs parameter {name} {value.shape}")
        m = state.m.get(name, np.zeros_like(value))
        v = state.v.get(name, np.zeros_like(value))
        if m.shape != value.shape:
            raise ShapeMismatch(f"moment {m.shape} vs parameter {name} {value.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        m_hat = m / bc1
        v_hat = v / bc2
        new_params[name] = value - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[name] = m
        new_v[name] = v
    return new_params, replace(state, step=t, m=new_m, v=new_v)


def clip_grad_norm(grads: Mapping[str, Array], max_norm: float) -> dict[str, Array]:
    """Rescale gradients so their global L2 norm is at most ``max_norm`` (<= 0 disables)."""
    norm = ad.global_norm(grads.values())
    if max_norm <= 0 or norm <= max_norm:
        return dict(grads)
    scale = max_norm / norm
    return {name: g * scale for name, g in grads.items()}


# ---------------------------------------------------------------------------------------------
# Shared loop


@dataclass
class FitResult(Generic[M]):
    model: M
    history: list[dict[str, float]]
    optimizer: AdamState
    steps_done: int


def _optimize(
    params: Mapping[str, DiffTensor],
    loss_fn: Callable[[int, np.random.Generator], LossBreakdown],
    config: RunConfig,
    optimizer: AdamState,
    start: int,
    stop: int,
    *,
    desc: str,
    progress: bool = False,
    callback: StepCallback | None = None,
) -> tuple[list[dict[str, float]], AdamState]:
    history: list[dict[str, float]] = []
    log_every = max(1, config.optim.log_every)
    for step in tqdm(range(start, stop), desc=desc, disable=not progress, leave=False):
        parts = loss_fn(step, rng_for(config.seed, "step", step))
        total = total_loss(parts, config.loss, step)
        grads = ad.backward(total).for_params(params)
        norm = ad.global_norm(grads.values())
        if not np.isfinite(norm):
            raise NonFinite("non-finite gradient", step=step, terms=parts.as_floats())
        grads = clip_grad_norm(grads, config.optim.grad_clip)
        values, optimizer = adam_step(optimizer, {k: p.value for k, p in params.items()}, grads)
        for name, p in params.items():
            p.value[...] = values[name]
        row = log_row(step, parts, total)
        history.append(row)
        if (step + 1) % log_every == 0:
            logger.info(
                "%s step %d: total %.5g (recon %.5g, kl %.5g, beta %.3g, grad norm %.3g)",
                desc,
                step + 1,
                row["total"],
                row["recon_nll"] + row["recon_x0"],
                row["kl"],
                row["beta"],
                norm,
            )
        if callback is not None:
            callback(step + 1, row, optimizer)
    return history, optimizer


def _random_pixels(
    rng: np.random.Generator, intr: CameraIntrinsics, count: int
) -> tuple[Array, np.ndarray, np.ndarray]:
    cols = rng.integers(0, intr.width, size=count)
    rows = rng.integers(0, intr.height, size=count)
    return np.stack([cols + 0.5, rows + 0.5], axis=-1), rows, cols


def _pixel_index(pixels: Array, shape: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
    cols = np.clip(np.floor(pixels[:, 0]).astype(np.intp), 0, shape[1] - 1)
    rows = np.clip(np.floor(pixels[:, 1]).astype(np.intp), 0, shape[0] - 1)
    return rows, cols


def _assign(params: Mapping[str, DiffTensor], arrays: Mapping[str, Array]) -> None:
    for name, p in params.items():
        if name not in arrays:
            raise ConfigError(f"checkpoint has no parameter {name}")
        value = arrays[name]
        if value.shape != p.value.shape:
            raise ShapeMismatch(f"checkpoint {name} {value.shape} vs model {p.value.shape}")
        p.value[...] = value


def scene_bounds(config: RunConfig) -> SceneBounds:
    return SceneBounds(config.model.bounds_center, config.model.bounds_extent)


# ---------------------------------------------------------------------------------------------
# Per-clip objective


@dataclass(frozen=True)
class ObjectiveTerms:
    """Which terms of the clip objective are evaluated."""

    recon: bool = True
    velocity: bool = True
    tv: bool = True
    depth_slab: bool = True
    keypoint_flow: bool = True
    keypoint_reproj: bool = True

    @classmethod
    def keypoints_only(cls) -> ObjectiveTerms:
        return cls(recon=False, velocity=False, tv=False, depth_slab=False)


def clip_objective(
    scene_field: SceneField,
    camera: CameraTrack,
    motion: MotionTrack,
    frames: Array,
    depths: Array,
    tracks: Sequence[KeypointTrack],
    intr: CameraIntrinsics,
    config: RunConfig,
    rng: np.random.Generator,
    terms: ObjectiveTerms = ObjectiveTerms(),
) -> LossBreakdown:
    """Reconstruction and regularizer terms for one clip of L + 1 frames.

    ``recon_nll`` sums the per-frame mean NLL over the future frames and ``recon_x0`` is the
    frame-0 mean, so with unit x0 weight every sampled pixel counts the same. Depth priors for
    frame t are read from ``depths[t]``; zero depth marks pixels without a prior.
    """
    render = config.render
    sigma = config.loss.pixel_std
    future: list[DiffTensor] = []
    recon_x0 = ad.constant(0.0)
    slabs: list[DiffTensor] = []
    if terms.recon or terms.depth_slab:
        for t in range(camera.num_frames):
            px, rows, cols = _random_pixels(rng, intr, config.optim.rays_per_frame)
            prior = depths[t][rows, cols]
            batch = render_rays(scene_field, camera, motion, t, intr, px, render, prior, rng)
            if terms.recon:
                nll = recon_nll(batch.rgb, frames[t][rows, cols], sigma)
                if t == 0:
                    recon_x0 = nll
                else:
                    future.append(nll)
            if terms.depth_slab:
                assert batch.depth_prior is not None
                slabs.append(
                    reg_depth_slab(
                        batch.termination, batch.samples.distances, batch.depth_prior, prior > 0
                    )
                )
    parts: dict[str, Any] = {
        "recon_nll": ad.tsum(ad.stack(future)) if future else ad.constant(0.0),
        "recon_x0": recon_x0,
    }
    if slabs:
        parts["reg_depth_slab"] = ad.mean(ad.stack(slabs))
    if terms.velocity:
        parts["reg_velocity"] = reg_l1_velocity(motion)
    patch = config.loss.tv_patch
    if terms.tv and 3 <= patch <= min(intr.width, intr.height):
        t = int(rng.integers(0, camera.num_frames))
        r0 = int(rng.integers(0, intr.height - patch + 1))
        c0 = int(rng.integers(0, intr.width - patch + 1))
        rr, cc = np.meshgrid(np.arange(r0, r0 + patch), np.arange(c0, c0 + patch), indexing="ij")
        px = np.stack([cc.ravel() + 0.5, rr.ravel() + 0.5], axis=-1)
        prior = depths[t][rr.ravel(), cc.ravel()]
        batch = render_rays(scene_field, camera, motion, t, intr, px, render, prior, rng)
        seg = ad.reshape(batch.segmentation, (patch, patch, scene_field.num_components))
        wx, wy = edge_weights(frames[t], config.loss.tv_zeta)
        window = (slice(r0, r0 + patch), slice(c0, c0 + patch))
        parts["reg_tv"] = tv_edge_from_weights(seg, wx[window], wy[window])
    if terms.keypoint_flow:
        residuals = []
        for t in range(1, camera.num_frames):
            pairs = keypoint_pairs(tracks, t)
            if not len(pairs):
                continue
            rows, cols = _pixel_index(pairs.k0, depths[0].shape)
            pred = render_flow_rays(
                scene_field, camera, motion, t, intr, pairs.k0, render, depths[0][rows, cols], rng
            )
            residuals.append(keypoint_flow_residual(pairs, pred))
        if residuals:
            parts["reg_kp_flow"] = ad.mean(ad.concat(residuals, axis=0))
    if terms.keypoint_reproj:
        value, skipped = reg_keypoint_reproj(tracks, camera, motion, intr, depths[0])
        parts["reg_kp_reproj"] = value
        if skipped:
            logger.debug("keypoint reprojection skipped %d pairs", skipped)
    return LossBreakdown(**parts)


def _average(parts: Sequence[LossBreakdown], beta: float) -> LossBreakdown:
    names = parts[0].terms().keys()
    scale = 1.0 / len(parts)
    means = {n: ad.tsum(ad.stack([getattr(p, n) for p in parts])) * scale for n in names}
    return LossBreakdown(beta=beta, **means)


# ---------------------------------------------------------------------------------------------
# Static fit


@dataclass
class StaticModel:
    """A J = 1 scene function with directly optimized conditioning."""

    weights: FieldWeights
    cond: ConditioningState
    intr: CameraIntrinsics
    bounds: SceneBounds
    depth0: Array | None = None

    @classmethod
    def init(
        cls,
        config: RunConfig,
        intr: CameraIntrinsics,
        depth0: Array | None = None,
        seed: int | None = None,
    ) -> StaticModel:
        seed = config.seed if seed is None else seed
        shape = FieldShape.from_config(config.model, num_components=1)
        weights = FieldWeights.init(shape, rng_for(seed, "init", "field"))
        grid = config.model.feature_grid
        cond = ConditioningState.free(shape, grid, rng_for(seed, "init", "cond"))
        return cls(weights, cond, intr, scene_bounds(config), depth0)

    def field(self) -> LearnedField:
        return LearnedField(self.weights, self.cond, self.intr, self.bounds, self.depth0)

    def parameters(self) -> dict[str, DiffTensor]:
        return {**self.weights.parameters(), **self.cond.parameters()}

    def arrays(self) -> dict[str, Array]:
        out = {k: v.value for k, v in self.parameters().items()}
        if self.depth0 is not None:
            out["data.depth0"] = self.depth0
        return out

    def render_view(
        self,
        pose: PoseSE3,
        config: RunConfig,
        depth_prior: Array | None = None,
        threads: int = 1,
    ) -> FrameBuffer:
        """Render the scene from ``pose`` (a camera-to-world pose relative to view 0)."""
        track = track_from_poses([PoseSE3.identity(), pose])
        motion = identity_motion(1, 1)
        return render_image(
            self.field(),
            track,
            motion,
            1,
            self.intr,
            config.render,
            depth_prior=depth_prior,
            flow=False,
            threads=threads,
        )


def fit_static(
    dataset: StaticDataset,
    config: RunConfig,
    steps: int | None = None,
    *,
    model: StaticModel | None = None,
    optimizer: AdamState | None = None,
    progress: bool = False,
    callback: StepCallback | None = None,
) -> FitResult[StaticModel]:
    """Fit a scene function to posed views; ``steps`` defaults to ``optim.max_steps``."""
    if dataset.scene.num_components != 1:
        raise ConfigError(f"static fit needs a one-component scene, got {dataset.scene.name}")
    model = model or StaticModel.init(config, dataset.intr, dataset.depths[0])
    optimizer = optimizer or AdamState.from_config(config)
    track = track_from_poses(dataset.poses)
    motion = identity_motion(track.num_frames - 1, 1)
    params = model.parameters()
    views = dataset.num_views
    picks = min(config.optim.batch_size, views)

    def loss_fn(step: int, rng: np.random.Generator) -> LossBreakdown:
        scene_field = model.field()
        nlls = []
        for v in rng.choice(views, size=picks, replace=False):
            px, rows, cols = _random_pixels(rng, dataset.intr, config.optim.rays_per_frame)
            prior = dataset.depths[v][rows, cols]
            batch = render_rays(
                scene_field, track, motion, int(v), dataset.intr, px, config.render, prior, rng
            )
            nlls.append(recon_nll(batch.rgb, dataset.frames[v][rows, cols], config.loss.pixel_std))
        return LossBreakdown(recon_nll=ad.mean(ad.stack(nlls)))

    start = optimizer.step
    stop = start + (config.optim.max_steps if steps is None else steps)
    history, optimizer = _optimize(
        params,
        loss_fn,
        config,
        optimizer,
        start,
        stop,
        desc="fit-static",
        progress=progress,
        callback=callback,
    )
    return FitResult(model, history, optimizer, stop)


# ---------------------------------------------------------------------------------------------
# Dynamic fit


@dataclass(frozen=True)
class FreezeFlags:
    field: bool = False
    motion: bool = False
    camera: bool = False


def camera_params_like(track: CameraTrack, kind: CameraKind) -> Array:
    """Parameters of ``track`` in the ``kind`` parametrization."""
    if track.kind == kind:
        return track.params.value.copy()
    if kind == "general":
        # A vehicle camera is a yawing general camera without pitch.
        rot = track.rotations.value[1:]
        yaw = np.arctan2(-rot[:, 0, 2], rot[:, 0, 0])
        params = np.zeros((rot.shape[0], camera_dof("general")))
        params[:, 0:3] = track.translations.value[1:]
        params[:, 3] = yaw
        return params
    raise ConfigError(f"cannot express a {track.kind} camera track as a {kind} camera")


def motion_params_like(track: MotionTrack, kind: MotionKind) -> Array:
    """Parameters of ``track`` in the ``kind`` parametrization; se3 -> planar keeps xz."""
    if track.kind == kind:
        return track.params.value.copy()
    p = track.params.value
    if kind == "planar":
        if np.any(p[..., 1] != 0) or np.any(p[..., 3:] != 0):
            raise ConfigError("motion track has y translation or rotation; use motion_model se3")
        return p[..., [0, 2]].copy()
    out = np.zeros((*p.shape[:2], motion_dof("se3")))
    out[..., 0] = p[..., 0]
    out[..., 2] = p[..., 1]
    return out


@dataclass
class DynamicModel:
    """Free camera and component parameters of one clip plus the scene function they move.

    With ``oracle`` set, the analytic field of that scene stands in for the scene function.
    """

    camera_params: DiffTensor
    motion_params: DiffTensor
    camera_kind: CameraKind
    motion_kind: MotionKind
    static_background: bool
    intr: CameraIntrinsics
    bounds: SceneBounds
    depth0: Array | None = None
    weights: FieldWeights | None = None
    cond: ConditioningState | None = None
    oracle: SyntheticScene | None = None

    @classmethod
    def init(
        cls,
        config: RunConfig,
        intr: CameraIntrinsics,
        num_components: int,
        depth0: Array | None = None,
        oracle: SyntheticScene | None = None,
        truth: tuple[CameraTrack, MotionTrack] | None = None,
    ) -> DynamicModel:
        model = config.model
        steps = model.num_future_frames
        if truth is None:
            cam = np.zeros((steps, camera_dof(model.camera_model)))
            mot = np.zeros((steps, num_components, motion_dof(model.motion_model)))
        else:
            cam = camera_params_like(truth[0], model.camera_model)
            mot = motion_params_like(truth[1], model.motion_model)
        weights = cond = None
        if oracle is None:
            shape = FieldShape.from_config(model, num_components)
            weights = FieldWeights.init(shape, rng_for(config.seed, "init", "field"))
            cond = ConditioningState.free(
                shape, model.feature_grid, rng_for(config.seed, "init", "cond")
            )
        return cls(
            camera_params=ad.parameter(cam, name="camera.params"),
            motion_params=ad.parameter(mot, name="motion.params"),
            camera_kind=model.camera_model,
            motion_kind=model.motion_model,
            static_background=model.static_background,
            intr=intr,
            bounds=scene_bounds(config),
            depth0=depth0,
            weights=weights,
            cond=cond,
            oracle=oracle,
        )

    def tracks(self) -> tuple[CameraTrack, MotionTrack]:
        motion = pin_background(self.motion_params, self.static_background)
        return (
            camera_track_from_params(self.camera_kind, self.camera_params),
            motion_track_from_params(self.motion_kind, motion),
        )

    def field(self) -> SceneField:
        if self.oracle is not None:
            return oracle_field(self.oracle)
        assert self.weights is not None and self.cond is not None
        return LearnedField(self.weights, self.cond, self.intr, self.bounds, self.depth0)

    def parameters(self, freeze: FreezeFlags = FreezeFlags()) -> dict[str, DiffTensor]:
        out: dict[str, DiffTensor] = {}
        if not freeze.camera:
            out["camera.params"] = self.camera_params
        if not freeze.motion:
            out["motion.params"] = self.motion_params
        if not freeze.field and self.weights is not None and self.cond is not None:
            out.update(self.weights.parameters())
            out.update(self.cond.parameters())
        return out

    def arrays(self) -> dict[str, Array]:
        out = {k: v.value for k, v in self.parameters().items()}
        if self.depth0 is not None:
            out["data.depth0"] = self.depth0
        return out


def fit_dynamic(
    dataset: ClipDataset,
    config: RunConfig,
    steps: int | None = None,
    *,
    clip_index: int = 0,
    freeze: FreezeFlags = FreezeFlags(),
    use_oracle_field: bool = False,
    terms: ObjectiveTerms = ObjectiveTerms(),
    init: Literal["identity", "truth"] = "identity",
    model: DynamicModel | None = None,
    optimizer: AdamState | None = None,
    progress: bool = False,
    callback: StepCallback | None = None,
) -> FitResult[DynamicModel]:
    """Recover the camera and component motion of one clip under the full objective."""
    clip = dataset.clips[clip_index]
    if model is None:
        model = DynamicModel.init(
            config,
            dataset.intr,
            dataset.scene.num_components,
            depth0=clip.depths[0],
            oracle=dataset.scene if use_oracle_field else None,
            truth=(clip.camera, clip.motion) if init == "truth" else None,
        )
    optimizer = optimizer or AdamState.from_config(config)
    params = model.parameters(freeze)

    def loss_fn(step: int, rng: np.random.Generator) -> LossBreakdown:
        camera, motion = model.tracks()
        return clip_objective(
            model.field(),
            camera,
            motion,
            clip.frames,
            clip.depths,
            clip.tracks,
            dataset.intr,
            config,
            rng,
            terms,
        )

    start = optimizer.step
    stop = start + (config.optim.max_steps if steps is None else steps)
    history, optimizer = _optimize(
        params,
        loss_fn,
        config,
        optimizer,
        start,
        stop,
        desc="fit-dynamic",
        progress=progress,
        callback=callback,
    )
    return FitResult(model, history, optimizer, stop)


# ---------------------------------------------------------------------------------------------
# Conditional VAE


@dataclass
class VideoModel:
    """All trainable parts of the generative model."""

    encoder: ClipEncoder
    cond_net: ConditioningNet
    decoder: TransformDecoder
    weights: FieldWeights
    intr: CameraIntrinsics
    bounds: SceneBounds

    @classmethod
    def init(
        cls,
        config: RunConfig,
        intr: CameraIntrinsics,
        num_components: int | None = None,
        seed: int | None = None,
    ) -> VideoModel:
        seed = config.seed if seed is None else seed
        model = config.model
        shape = FieldShape.from_config(model, num_components)
        return cls(
            encoder=ClipEncoder.init(model, rng_for(seed, "init", "encoder")),
            cond_net=ConditioningNet.init(model, rng_for(seed, "init", "cond")),
            decoder=TransformDecoder.init(model, rng_for(seed, "init", "decoder"), num_components),
            weights=FieldWeights.init(shape, rng_for(seed, "init", "field")),
            intr=intr,
            bounds=scene_bounds(config),
        )

    @property
    def z_dim(self) -> int:
        return self.encoder.z_dim

    def parameters(self) -> dict[str, DiffTensor]:
        return {
            **self.encoder.parameters(),
            **self.cond_net.parameters(),
            **self.decoder.parameters(),
            **self.weights.parameters(),
        }

    def arrays(self) -> dict[str, Array]:
        return {k: v.value for k, v in self.parameters().items()}

    def condition(
        self, x0: ArrayLike, z: ArrayLike | DiffTensor, depth0: Array | None = None
    ) -> tuple[LearnedField, CameraTrack, MotionTrack]:
        """Scene function and tracks for initial frame ``x0`` under latent ``z``."""
        cond = self.cond_net(x0, z if isinstance(z, DiffTensor) else ad.constant(z))
        camera, motion = self.decoder(cond.xi)
        return LearnedField(self.weights, cond, self.intr, self.bounds, depth0), camera, motion


def _vae_clip_loss(
    model: VideoModel,
    frames: Array,
    depths: Array,
    tracks: Sequence[KeypointTrack],
    config: RunConfig,
    rng: np.random.Generator,
    terms: ObjectiveTerms = ObjectiveTerms(),
) -> tuple[LossBreakdown, DiffTensor]:
    posterior = encode_clip(frames, model.encoder)
    z = posterior_sample(posterior, rng)
    scene_field, camera, motion = model.condition(frames[0], z, depths[0])
    parts = clip_objective(
        scene_field, camera, motion, frames, depths, tracks, model.intr, config, rng, terms
    )
    return parts, kl_diag_gauss(posterior.mu, posterior.logvar)


def fit_vae(
    dataset: ClipDataset,
    config: RunConfig,
    steps: int | None = None,
    *,
    augment: bool = True,
    model: VideoModel | None = None,
    optimizer: AdamState | None = None,
    progress: bool = False,
    callback: StepCallback | None = None,
) -> FitResult[VideoModel]:
    """Train the conditional model end to end on the annealed ELBO plus the regularizers."""
    if len(dataset) == 0:
        raise ConfigError("fit-vae needs at least one clip")
    model = model or VideoModel.init(config, dataset.intr, dataset.scene.num_components)
    optimizer = optimizer or AdamState.from_config(config)
    params = model.parameters()
    picks = min(config.optim.batch_size, len(dataset))

    def loss_fn(step: int, rng: np.random.Generator) -> LossBreakdown:
        beta = beta_schedule(step, config.loss.kl_anneal_steps, config.loss.kl_weight)
        parts = []
        for n in rng.choice(len(dataset), size=picks, replace=False):
            clip = dataset.clips[n]
            frames, depths, tracks = clip.frames, clip.depths, clip.tracks
            if augment:
                aug = augment_clip(frames, rng, tracks=tracks, depths=depths)
                frames, depths = aug.frames, aug.depths
                tracks = aug.tracks or []
            assert depths is not None
            clip_parts, kl = _vae_clip_loss(model, frames, depths, tracks, config, rng)
            parts.append(replace(clip_parts, kl=kl))
        return _average(parts, beta)

    start = optimizer.step
    stop = start + (config.optim.max_steps if steps is None else steps)
    history, optimizer = _optimize(
        params,
        loss_fn,
        config,
        optimizer,
        start,
        stop,
        desc="fit-vae",
        progress=progress,
        callback=callback,
    )
    return FitResult(model, history, optimizer, stop)


def reconstruction_nll(
    model: VideoModel,
    clip: ClipSample,
    z: ArrayLike,
    config: RunConfig,
    seed: int = 0,
) -> float:
    """Reconstruction NLL of ``clip`` (frame 0 plus futures) generated under latent ``z``."""
    scene_field, camera, motion = model.condition(clip.frames[0], z, clip.depths[0])
    recon_only = ObjectiveTerms(
        velocity=False, tv=False, depth_slab=False, keypoint_flow=False, keypoint_reproj=False
    )
    eval_config = replace(config, render=replace(config.render, jitter=False))
    parts = clip_objective(
        scene_field.detached(),
        camera,
        motion,
        clip.frames,
        clip.depths,
        [],
        model.intr,
        eval_config,
        rng_for(seed, "nll"),
        recon_only,
    )
    return float(parts.recon_nll.item() + parts.recon_x0.item())


@dataclass
class GeneratedClip:
    """Frames rendered from one latent draw."""

    z: Array
    camera: CameraTrack
    motion: MotionTrack
    frames: list[FrameBuffer]

    @property
    def rgb(self) -> Array:
        return np.stack([f.rgb for f in self.frames])


def sample_future(
    model: VideoModel,
    x0: ArrayLike,
    config: RunConfig,
    seed: int,
    stream: int = 0,
    depth0: Array | None = None,
    z: ArrayLike | None = None,
    threads: int = 1,
) -> GeneratedClip:
    """Draw z from the prior (stream ``stream`` under ``seed``) and render the clip it implies.

    Every frame uses ``depth0`` as its depth prior; without one, sampling is uniform.
    """
    latent = sample_prior(model.z_dim, seed, stream) if z is None else np.asarray(z, float)
    scene_field, camera, motion = model.condition(x0, latent, depth0)
    frames = [
        render_image(
            scene_field,
            camera,
            motion,
            t,
            model.intr,
            config.render,
            depth_prior=depth0,
            threads=threads,
        )
        for t in range(camera.num_frames)
    ]
    return GeneratedClip(latent, camera, motion, frames)


# ---------------------------------------------------------------------------------------------
# Gradient verification


@dataclass
class GradcheckReport:
    """``max_error`` is |a - n| / (|a| + |n| + 1e-12); ``max_floored_error`` puts a
    1e-6·max(1, |loss|) floor in the denominator instead.
    """

    max_error: float
    rows: list[tuple[str, int, float, float]]
    loss: float
    max_floored_error: float = 0.0


def gradient_check(
    config: RunConfig,
    clip: ClipSample,
    intr: CameraIntrinsics,
    num_picks: int = 200,
    seed: int = 0,
    h: float = 1e-5,
    camera_kinds: Sequence[CameraKind] = ("general", "vehicle"),
) -> GradcheckReport:
    """Compare backward() of the full objective with central differences.

    For each camera parametrization a model is built, every parameter is perturbed off its
    initial value, and ``num_picks`` entries spread over all parameter groups are checked.
    Both relative errors of GradcheckReport are reported over the same entries.
    """
    rows: list[tuple[str, int, float, float]] = []
    worst = 0.0
    worst_floored = 0.0
    loss_value = 0.0
    per_kind = max(1, num_picks // len(camera_kinds))
    for kind in camera_kinds:
        cfg = replace(config, model=replace(config.model, camera_model=kind))
        model = VideoModel.init(cfg, intr, clip.motion.num_components, seed=seed)
        params = model.parameters()
        jitter = rng_for(seed, "gradcheck", kind, "jitter")
        for p in params.values():
            p.value += jitter.normal(0.0, 0.02, size=p.value.shape)

        def loss_fn(model: VideoModel = model, cfg: RunConfig = cfg) -> DiffTensor:
            rng = rng_for(seed, "gradcheck", "loss")
            parts, kl = _vae_clip_loss(model, clip.frames, clip.depths, clip.tracks, cfg, rng)
            parts = replace(parts, kl=kl, beta=cfg.loss.kl_weight)
            return total_loss(parts, cfg.loss)

        names = sorted(params)
        pick_rng = rng_for(seed, "gradcheck", kind, "picks")
        picks = []
        for n in range(per_kind):
            name = names[n % len(names)]
            picks.append((name, int(pick_rng.integers(0, params[name].value.size))))
        loss = loss_fn().item()
        kind_worst, kind_rows = ad.finite_diff_check_params(loss_fn, params, picks, h)
        worst = max(worst, kind_worst)
        floor = 1e-6 * max(1.0, abs(loss))
        for name, i, a, n_ in kind_rows:
            worst_floored = max(worst_floored, abs(a - n_) / (abs(a) + abs(n_) + floor))
        rows.extend((f"{kind}:{name}", i, a, n_) for name, i, a, n_ in kind_rows)
        loss_value = max(loss_value, abs(loss))
    logger.info(
        "gradient check over %d entries: max relative error %.3g (%.3g with loss floor)",
        len(rows),
        worst,
        worst_floored,
    )
    return GradcheckReport(worst, rows, loss_value, worst_floored)


# ---------------------------------------------------------------------------------------------
# Checkpoints


def save_checkpoint(
    path: str | Path,
    config: RunConfig,
    arrays: Mapping[str, Array],
    optimizer: AdamState,
    meta: Mapping[str, Any] | None = None,
) -> None:
    ckpt = Checkpoint(
        config,
        {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()},
        optimizer.snapshot(),
        dict(meta or {}),
    )
    save_checkpoint_file(path, ckpt)


def load_checkpoint(path: str | Path) -> Checkpoint:
    return load_checkpoint_file(path)


def restore_static(ckpt: Checkpoint, intr: CameraIntrinsics) -> StaticModel:
    model = StaticModel.init(ckpt.config, intr, ckpt.params.get("data.depth0"))
    _assign(model.parameters(), ckpt.params)
    return model


def restore_dynamic(
    ckpt: Checkpoint, intr: CameraIntrinsics, oracle: SyntheticScene | None = None
) -> DynamicModel:
    motion = ckpt.params.get("motion.params")
    if motion is None:
        raise ConfigError("checkpoint holds no motion parameters")
    model = DynamicModel.init(
        ckpt.config, intr, motion.shape[1], ckpt.params.get("data.depth0"), oracle
    )
    _assign(model.parameters(), ckpt.params)
    return model


def restore_video(ckpt: Checkpoint, intr: CameraIntrinsics) -> VideoModel:
    comps = int(ckpt.meta.get("num_components", ckpt.config.model.component_count))
    model = VideoModel.init(ckpt.config, intr, comps)
    _assign(model.parameters(), ckpt.params)
    return model
