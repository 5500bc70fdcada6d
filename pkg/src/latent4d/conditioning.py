"""Conditioning network and transform decoders.

The conditioning network encodes the initial frame x0 with two strided convolutions. The
second one yields the feature map ζ_feat; its pooled activations, concatenated with the latent
z, give the embedding ξ. The transform decoders read ξ and emit the camera and motion-component
parameters for the L future frames.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from . import autodiff as ad
from .autodiff import Array, DiffTensor, TensorLike
from .config import ModelConfig
from .errors import ShapeMismatch
from .field import ConditioningState, dense, glorot
from .geometry import (
    CameraKind,
    CameraTrack,
    MotionKind,
    MotionTrack,
    camera_dof,
    camera_track_from_params,
    motion_dof,
    motion_track_from_params,
)

logger = logging.getLogger(__name__)


def downsample(frame: ArrayLike, size: int) -> Array:
    """Area-average an (H, W, C) image down to (size, size, C)."""
    img = np.asarray(frame, dtype=np.float64)
    h, w = img.shape[0], img.shape[1]
    if h % size or w % size:
        raise ShapeMismatch(f"cannot area-downsample {h}x{w} to {size}x{size}")
    fh, fw = h // size, w // size
    return img.reshape(size, fh, size, fw, -1).mean(axis=(1, 3))


def conv_init(rng: np.random.Generator, out_ch: int, in_ch: int, k: int = 3) -> Array:
    fan_in = in_ch * k * k
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=(out_ch, in_ch, k, k))


@dataclass(frozen=True)
class ConditioningNet:
    """x0, z -> ConditioningState(ξ, ζ_feat, z)."""

    resolution: int
    z_dim: int
    params: dict[str, DiffTensor]

    @classmethod
    def init(cls, model: ModelConfig, rng: np.random.Generator) -> ConditioningNet:
        if model.cond_resolution // 4 != model.feature_grid:
            raise ShapeMismatch(
                f"cond_resolution {model.cond_resolution} must be 4x feature_grid "
                f"{model.feature_grid}"
            )
        ch, feat, emb = model.cond_channels, model.feature_channels, model.embedding_dim
        p = {
            "cond.conv1.w": ad.parameter(conv_init(rng, ch, 3)),
            "cond.conv1.b": ad.parameter(np.zeros(ch)),
            "cond.conv2.w": ad.parameter(conv_init(rng, feat, ch)),
            "cond.conv2.b": ad.parameter(np.zeros(feat)),
            "cond.xi.w": ad.parameter(glorot(rng, feat + model.z_dim, emb)),
            "cond.xi.b": ad.parameter(np.zeros(emb)),
        }
        for name, tensor in p.items():
            tensor.name = name
        return cls(model.cond_resolution, model.z_dim, p)

    def parameters(self) -> dict[str, DiffTensor]:
        return dict(self.params)

    def features(self, x0: ArrayLike) -> DiffTensor:
        """ζ_feat of shape (g, g, C) for the frame x0 (H, W, 3)."""
        small = downsample(x0, self.resolution)
        x = ad.constant(np.transpose(small, (2, 0, 1))[None])
        p = self.params
        h = ad.conv2d(x, p["cond.conv1.w"], stride=2, padding=1)
        h = ad.relu(h + ad.reshape(p["cond.conv1.b"], (1, -1, 1, 1)))
        h = ad.conv2d(h, p["cond.conv2.w"], stride=2, padding=1)
        h = ad.tanh(h + ad.reshape(p["cond.conv2.b"], (1, -1, 1, 1)))
        return ad.transpose(h[0], (1, 2, 0))

    def __call__(self, x0: ArrayLike, z: TensorLike) -> ConditioningState:
        z = ad.as_tensor(z)
        if z.shape != (self.z_dim,):
            raise ShapeMismatch(f"latent must have shape ({self.z_dim},), got {z.shape}")
        feats = self.features(x0)
        pooled = ad.mean(feats, axis=(0, 1))
        p = self.params
        xi = dense(ad.concat([pooled, z], axis=0), p["cond.xi.w"], p["cond.xi.b"])
        return ConditioningState(xi, feats, z)


@dataclass(frozen=True)
class TransformDecoder:
    """ξ -> (CameraTrack, MotionTrack), starting from the identity everywhere."""

    num_future: int
    num_components: int
    camera_kind: CameraKind
    motion_kind: MotionKind
    static_background: bool
    params: dict[str, DiffTensor]

    @classmethod
    def init(
        cls, model: ModelConfig, rng: np.random.Generator, num_components: int | None = None
    ) -> TransformDecoder:
        comps = num_components or model.component_count
        emb, width, steps = model.embedding_dim, model.decoder_width, model.num_future_frames
        motion_out = steps * comps * motion_dof(model.motion_model)
        camera_out = steps * camera_dof(model.camera_model)
        p = {
            "decoder.hidden.w": ad.parameter(glorot(rng, emb, width)),
            "decoder.hidden.b": ad.parameter(np.zeros(width)),
            "decoder.motion.w": ad.parameter(np.zeros((width, motion_out))),
            "decoder.motion.b": ad.parameter(np.zeros(motion_out)),
            "decoder.camera.w": ad.parameter(np.zeros((width, camera_out))),
            "decoder.camera.b": ad.parameter(np.zeros(camera_out)),
        }
        for name, tensor in p.items():
            tensor.name = name
        return cls(
            steps, comps, model.camera_model, model.motion_model, model.static_background, p
        )

    def parameters(self) -> dict[str, DiffTensor]:
        return dict(self.params)

    def raw(self, xi: TensorLike) -> tuple[DiffTensor, DiffTensor]:
        """Camera params (L, camera dof) and motion params (L, J, motion dof)."""
        p = self.params
        h = ad.relu(dense(xi, p["decoder.hidden.w"], p["decoder.hidden.b"]))
        motion = dense(h, p["decoder.motion.w"], p["decoder.motion.b"])
        camera = dense(h, p["decoder.camera.w"], p["decoder.camera.b"])
        motion = ad.reshape(
            motion, (self.num_future, self.num_components, motion_dof(self.motion_kind))
        )
        camera = ad.reshape(camera, (self.num_future, camera_dof(self.camera_kind)))
        return camera, pin_background(motion, self.static_background)

    def __call__(self, xi: TensorLike) -> tuple[CameraTrack, MotionTrack]:
        camera, motion = self.raw(xi)
        return (
            camera_track_from_params(self.camera_kind, camera),
            motion_track_from_params(self.motion_kind, motion),
        )


def pin_background(motion_params: DiffTensor, static_background: bool) -> DiffTensor:
    """Zero the parameters of component 1 when the background is held static."""
    if not static_background:
        return motion_params
    mask = np.ones(motion_params.shape)
    mask[:, 0, :] = 0.0
    return motion_params * mask
