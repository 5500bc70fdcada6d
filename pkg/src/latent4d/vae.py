"""Variational encoder over whole clips, reparameterization and prior sampling."""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike

from . import autodiff as ad
from .autodiff import Array, DiffTensor
from .conditioning import conv_init, downsample
from .config import ModelConfig
from .errors import ShapeMismatch
from .field import dense, glorot
from .seeding import rng_for


@dataclass(frozen=True)
class LatentGaussian:
    """Diagonal Gaussian Q(z | clip)."""

    mu: DiffTensor
    logvar: DiffTensor

    @property
    def dim(self) -> int:
        return self.mu.shape[0]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.mu.value)) and np.all(np.isfinite(self.logvar.value)))


@dataclass(frozen=True)
class ClipEncoder:
    """Three stride-2 convolutions over the channel-stacked clip, mean pooling and a dense head.

    The output layer starts at zero, so a fresh encoder returns μ = 0 and logvar = 0.
    """

    num_frames: int
    resolution: int
    z_dim: int
    params: dict[str, DiffTensor]

    @classmethod
    def init(cls, model: ModelConfig, rng: np.random.Generator) -> ClipEncoder:
        frames = model.num_future_frames + 1
        ch = model.encoder_channels
        p = {
            "encoder.conv1.w": ad.parameter(conv_init(rng, ch, 3 * frames)),
            "encoder.conv1.b": ad.parameter(np.zeros(ch)),
            "encoder.conv2.w": ad.parameter(conv_init(rng, ch, ch)),
            "encoder.conv2.b": ad.parameter(np.zeros(ch)),
            "encoder.conv3.w": ad.parameter(conv_init(rng, ch, ch)),
            "encoder.conv3.b": ad.parameter(np.zeros(ch)),
            "encoder.hidden.w": ad.parameter(glorot(rng, ch, ch)),
            "encoder.hidden.b": ad.parameter(np.zeros(ch)),
            "encoder.out.w": ad.parameter(np.zeros((ch, 2 * model.z_dim))),
            "encoder.out.b": ad.parameter(np.zeros(2 * model.z_dim)),
        }
        for name, tensor in p.items():
            tensor.name = name
        return cls(frames, model.encoder_resolution, model.z_dim, p)

    def parameters(self) -> dict[str, DiffTensor]:
        return dict(self.params)


def stack_clip(frames: Sequence[ArrayLike] | Array, resolution: int) -> Array:
    """Downsample each (H, W, 3) frame and stack channelwise into (1, 3·F, r, r)."""
    small = [downsample(f, resolution) for f in frames]
    return np.concatenate([np.transpose(s, (2, 0, 1)) for s in small], axis=0)[None]


def encode_clip(frames: Sequence[ArrayLike] | Array, encoder: ClipEncoder) -> LatentGaussian:
    if len(frames) != encoder.num_frames:
        raise ShapeMismatch(f"encoder expects {encoder.num_frames} frames, got {len(frames)}")
    p = encoder.params
    h: DiffTensor = ad.constant(stack_clip(frames, encoder.resolution))
    for layer in ("conv1", "conv2", "conv3"):
        h = ad.conv2d(h, p[f"encoder.{layer}.w"], stride=2, padding=1)
        h = ad.relu(h + ad.reshape(p[f"encoder.{layer}.b"], (1, -1, 1, 1)))
    pooled = ad.mean(h[0], axis=(1, 2))
    hidden = ad.relu(dense(pooled, p["encoder.hidden.w"], p["encoder.hidden.b"]))
    out = dense(hidden, p["encoder.out.w"], p["encoder.out.b"])
    return LatentGaussian(out[: encoder.z_dim], out[encoder.z_dim :])


def reparameterize(g: LatentGaussian, noise: ArrayLike) -> DiffTensor:
    """z = μ + exp(logvar / 2) ⊙ ε."""
    eps = np.asarray(noise, dtype=np.float64)
    if eps.shape != g.mu.shape:
        raise ShapeMismatch(f"noise {eps.shape} vs latent {g.mu.shape}")
    return g.mu + ad.exp(g.logvar * 0.5) * eps


def sample_prior(dim: int, seed: int, *stream: str | int) -> Array:
    """D standard normals from the named stream under ``seed``."""
    return rng_for(seed, "prior", *stream).standard_normal(dim)


def posterior_sample(g: LatentGaussian, rng: np.random.Generator) -> DiffTensor:
    return reparameterize(g, rng.standard_normal(g.dim))
