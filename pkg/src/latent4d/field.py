"""The scene function F(p) = [ρ(p), c(p), ω(p)].

F is a small coordinate network over the Fourier embedding of a frame-0 point, concatenated
with features bilinearly sampled from the conditioning feature map ζ_feat at the point's
frame-0 projection and with the depth prior. Hidden blocks are Dense -> LeakyReLU -> FiLM with
residual connections; FiLM coefficients come from the conditioning embedding ξ.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Protocol

import numpy as np
from numpy.typing import ArrayLike

from . import autodiff as ad
from .autodiff import Array, DiffTensor, TensorLike
from .config import ModelConfig
from .errors import OutOfRange, ShapeMismatch
from .geometry import CameraIntrinsics

SampleMode = Literal["clamp", "error"]


@dataclass(frozen=True)
class SceneBounds:
    """Axis-aligned cube mapped onto [-1, 1]^3 before embedding."""

    center: tuple[float, float, float]
    extent: float

    def normalize(self, points: TensorLike) -> DiffTensor:
        return (ad.as_tensor(points) - np.asarray(self.center)) * (1.0 / self.extent)

    def contains(self, points: ArrayLike, tol: float = 1e-9) -> bool:
        p = (np.asarray(points, dtype=np.float64) - np.asarray(self.center)) / self.extent
        return bool(np.all(np.abs(p) <= 1.0 + tol))

    @property
    def center_distance(self) -> float:
        return float(np.linalg.norm(self.center))


@dataclass(frozen=True)
class SceneSample:
    """Field outputs at a batch of points: ρ (...), c (..., 3), ω (..., J)."""

    density: DiffTensor
    color: DiffTensor
    weights: DiffTensor

    @property
    def num_components(self) -> int:
        return self.weights.shape[-1]

    def reshape(self, lead: tuple[int, ...]) -> SceneSample:
        return SceneSample(
            ad.reshape(self.density, lead),
            ad.reshape(self.color, (*lead, 3)),
            ad.reshape(self.weights, (*lead, self.num_components)),
        )


class SceneField(Protocol):
    """Anything that evaluates F at frame-0 points."""

    @property
    def num_components(self) -> int: ...

    def __call__(self, points: DiffTensor) -> SceneSample: ...

    def detached(self) -> SceneField: ...


# ---------------------------------------------------------------------------------------------
# Building blocks


def fourier_embed(p: TensorLike, num_bands: int) -> DiffTensor:
    """Concatenate [p, sin(2^b π p), cos(2^b π p) for b < num_bands] on the last axis."""
    p = ad.as_tensor(p)
    parts = [p]
    for band in range(num_bands):
        scaled = p * (2.0**band * np.pi)
        parts.append(ad.sin(scaled))
        parts.append(ad.cos(scaled))
    return ad.concat(parts, axis=-1)


def embed_dim(num_bands: int) -> int:
    return 3 + 6 * num_bands


def modulate(h: TensorLike, gamma: TensorLike, beta: TensorLike) -> DiffTensor:
    """Feature-wise linear modulation γ ⊙ h + β."""
    h = ad.as_tensor(h)
    gamma, beta = ad.as_tensor(gamma), ad.as_tensor(beta)
    if gamma.shape[-1] != h.shape[-1] or beta.shape[-1] != h.shape[-1]:
        raise ShapeMismatch(f"FiLM {gamma.shape}/{beta.shape} against hidden {h.shape}")
    return gamma * h + beta


def bilinear_sample(grid: TensorLike, uv: TensorLike, mode: SampleMode = "clamp") -> DiffTensor:
    """Sample a (h, w, C) grid at continuous uv in [0, 1]^2; u runs along columns.

    Grid nodes sit at u = i / (w - 1), v = j / (h - 1). Out-of-range uv is clamped to the edge,
    or rejected with OutOfRange when ``mode == "error"``.
    """
    grid = ad.as_tensor(grid)
    uv = ad.as_tensor(uv)
    if grid.ndim != 3 or grid.shape[0] < 2 or grid.shape[1] < 2:
        raise ShapeMismatch(f"feature grid must be (h>=2, w>=2, C), got {grid.shape}")
    if uv.shape[-1] != 2:
        raise ShapeMismatch(f"uv must end in 2, got {uv.shape}")
    outside = (uv.value < 0.0) | (uv.value > 1.0)
    if mode == "error" and np.any(outside):
        raise OutOfRange(f"{int(outside.any(axis=-1).sum())} uv coordinates outside [0, 1]^2")
    uv = ad.clamp(uv, 0.0, 1.0) if np.any(outside) else uv
    gh, gw = grid.shape[0], grid.shape[1]
    x = uv[..., 0] * float(gw - 1)
    y = uv[..., 1] * float(gh - 1)
    x0 = np.clip(np.floor(x.value), 0, gw - 2).astype(np.intp)
    y0 = np.clip(np.floor(y.value), 0, gh - 2).astype(np.intp)
    fx = ad.reshape(x - x0, (*x.shape, 1))
    fy = ad.reshape(y - y0, (*y.shape, 1))
    g00 = grid[y0, x0]
    g01 = grid[y0, x0 + 1]
    g10 = grid[y0 + 1, x0]
    g11 = grid[y0 + 1, x0 + 1]
    top = g00 + (g01 - g00) * fx
    bottom = g10 + (g11 - g10) * fx
    return top + (bottom - top) * fy


def dense(x: TensorLike, w: DiffTensor, b: DiffTensor) -> DiffTensor:
    return ad.matmul(x, w) + b


def layer_norm(h: DiffTensor, eps: float = 1e-5) -> DiffTensor:
    centered = h - ad.mean(h, axis=-1, keepdims=True)
    var = ad.mean(centered * centered, axis=-1, keepdims=True)
    return centered / ad.sqrt(var + eps)


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> Array:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


# ---------------------------------------------------------------------------------------------
# Weights and conditioning


@dataclass(frozen=True)
class FieldShape:
    num_components: int
    hidden_width: int
    hidden_layers: int
    num_bands: int
    feature_channels: int
    embedding_dim: int
    film_blocks: int = 1
    leaky_slope: float = 0.2
    layer_norm: bool = False

    @classmethod
    def from_config(cls, model: ModelConfig, num_components: int | None = None) -> FieldShape:
        return cls(
            num_components=num_components or model.component_count,
            hidden_width=model.hidden_width,
            hidden_layers=model.hidden_layers,
            num_bands=model.num_bands,
            feature_channels=model.feature_channels,
            embedding_dim=model.embedding_dim,
            film_blocks=model.film_blocks,
            leaky_slope=model.leaky_slope,
            layer_norm=model.layer_norm,
        )

    @property
    def input_dim(self) -> int:
        return embed_dim(self.num_bands) + self.feature_channels + 1

    @property
    def output_dim(self) -> int:
        return 1 + 3 + self.num_components


@dataclass(frozen=True)
class FieldWeights:
    """Parameters of F: input layer, hidden layers, FiLM projection and output head."""

    shape: FieldShape
    params: dict[str, DiffTensor]

    @classmethod
    def init(cls, shape: FieldShape, rng: np.random.Generator) -> FieldWeights:
        width, emb = shape.hidden_width, shape.embedding_dim
        p: dict[str, DiffTensor] = {
            "field.in.w": ad.parameter(glorot(rng, shape.input_dim, width)),
            "field.in.b": ad.parameter(np.zeros(width)),
        }
        for layer in range(shape.hidden_layers):
            p[f"field.hidden{layer}.w"] = ad.parameter(glorot(rng, width, width))
            p[f"field.hidden{layer}.b"] = ad.parameter(np.zeros(width))
        for block in range(shape.film_blocks):
            p[f"field.film{block}.w"] = ad.parameter(glorot(rng, emb, emb))
            p[f"field.film{block}.b"] = ad.parameter(np.zeros(emb))
        # Zero projection with γ offset by one: FiLM starts as the identity.
        p["field.film_out.w"] = ad.parameter(np.zeros((emb, 2 * width * shape.hidden_layers)))
        p["field.film_out.b"] = ad.parameter(np.zeros(2 * width * shape.hidden_layers))
        p["field.head.w"] = ad.parameter(glorot(rng, width, shape.output_dim) * 0.1)
        p["field.head.b"] = ad.parameter(np.zeros(shape.output_dim))
        for name, tensor in p.items():
            tensor.name = name
        return cls(shape, p)

    def parameters(self) -> dict[str, DiffTensor]:
        return dict(self.params)

    def __getitem__(self, name: str) -> DiffTensor:
        return self.params[f"field.{name}"]


@dataclass(frozen=True)
class ConditioningState:
    """ξ (E,), the feature grid ζ_feat (h, w, C) and the latent z (D,) when one is in use."""

    xi: DiffTensor
    features: DiffTensor
    z: DiffTensor | None = None

    @classmethod
    def free(cls, shape: FieldShape, grid: int, rng: np.random.Generator) -> ConditioningState:
        """Directly optimized conditioning, for fits without a conditioning network."""
        xi = ad.parameter(np.zeros(shape.embedding_dim), name="cond.xi")
        feats = ad.parameter(
            rng.normal(0.0, 0.1, size=(grid, grid, shape.feature_channels)), name="cond.features"
        )
        return cls(xi, feats)

    def parameters(self) -> dict[str, DiffTensor]:
        return {"cond.xi": self.xi, "cond.features": self.features}

    def is_finite(self) -> bool:
        ok = bool(np.all(np.isfinite(self.xi.value)) and np.all(np.isfinite(self.features.value)))
        return ok and (self.z is None or bool(np.all(np.isfinite(self.z.value))))


def film_coefficients(
    weights: FieldWeights, xi: TensorLike
) -> list[tuple[DiffTensor, DiffTensor]]:
    """Per hidden layer (γ, β) computed from ξ through residual dense blocks."""
    shape = weights.shape
    h = ad.as_tensor(xi)
    for block in range(shape.film_blocks):
        h = h + ad.relu(dense(h, weights[f"film{block}.w"], weights[f"film{block}.b"]))
    raw = dense(h, weights["film_out.w"], weights["film_out.b"])
    width = shape.hidden_width
    coeffs = []
    for layer in range(shape.hidden_layers):
        base = 2 * width * layer
        gamma = raw[base : base + width] + 1.0
        beta = raw[base + width : base + 2 * width]
        coeffs.append((gamma, beta))
    return coeffs


def film(h: TensorLike, xi: TensorLike, weights: FieldWeights, layer: int = 0) -> DiffTensor:
    """Modulate hidden layer ``layer`` by the (γ, β) the FiLM projection computes from ξ."""
    shape = weights.shape
    if not 0 <= layer < shape.hidden_layers:
        raise ShapeMismatch(f"FiLM layer {layer} outside 0..{shape.hidden_layers - 1}")
    gamma, beta = film_coefficients(weights, xi)[layer]
    return modulate(h, gamma, beta)


def feature_uv(intr: CameraIntrinsics, points: TensorLike) -> DiffTensor:
    """Normalized image coordinates of frame-0 points under the identity camera."""
    p = ad.as_tensor(points)
    depth = ad.maximum(-p[..., 2], 1e-6)
    u = (intr.cx + intr.fx * p[..., 0] / depth) * (1.0 / intr.width)
    v = (intr.cy - intr.fy * p[..., 1] / depth) * (1.0 / intr.height)
    return ad.stack([u, v], axis=-1)


def scene_eval(
    weights: FieldWeights,
    cond: ConditioningState,
    p0: TensorLike,
    depth_prior: TensorLike,
    *,
    intr: CameraIntrinsics,
    bounds: SceneBounds,
    coeffs: list[tuple[DiffTensor, DiffTensor]] | None = None,
) -> SceneSample:
    """Evaluate F at frame-0 points ``p0`` of shape (M, 3) with per-point depth priors (M,)."""
    shape = weights.shape
    p0 = ad.as_tensor(p0)
    if p0.ndim != 2 or p0.shape[1] != 3:
        raise ShapeMismatch(f"scene_eval expects (M, 3) points, got {p0.shape}")
    depth = ad.as_tensor(depth_prior)
    if coeffs is None:
        coeffs = film_coefficients(weights, cond.xi)
    embedded = fourier_embed(bounds.normalize(p0), shape.num_bands)
    feats = bilinear_sample(cond.features, feature_uv(intr, p0))
    depth_in = ad.reshape((depth - bounds.center_distance) * (1.0 / bounds.extent), (-1, 1))
    x = ad.concat([embedded, feats, ad.broadcast_to(depth_in, (p0.shape[0], 1))], axis=-1)
    h = ad.relu(dense(x, weights["in.w"], weights["in.b"]))
    for layer, (gamma, beta) in enumerate(coeffs):
        update = ad.leaky_relu(
            dense(h, weights[f"hidden{layer}.w"], weights[f"hidden{layer}.b"]), shape.leaky_slope
        )
        if shape.layer_norm:
            update = layer_norm(update)
        h = h + modulate(update, gamma, beta)
    out = dense(h, weights["head.w"], weights["head.b"])
    return SceneSample(
        density=ad.softplus(out[:, 0]),
        color=ad.sigmoid(out[:, 1:4]),
        weights=ad.softmax(out[:, 4:], axis=-1),
    )


@dataclass(frozen=True)
class LearnedField:
    """F bound to its weights and conditioning, callable on points of any leading shape.

    The depth input of F is read from ``depth0``, the frame-0 depth prior (H, W), at each
    point's frame-0 projection. Without a depth map the input sits at the bounds center.
    """

    weights: FieldWeights
    cond: ConditioningState
    intr: CameraIntrinsics
    bounds: SceneBounds
    depth0: Array | None = None

    @property
    def num_components(self) -> int:
        return self.weights.shape.num_components

    def depth_at(self, points: DiffTensor) -> DiffTensor:
        """Frame-0 depth prior looked up at the projection of (M, 3) points."""
        if self.depth0 is None:
            return ad.constant(np.full(points.shape[0], self.bounds.center_distance))
        h, w = self.depth0.shape
        uv = feature_uv(self.intr, points)
        # Pixel centers sit half a pixel inside the node-aligned sampling grid.
        scale = np.array([w / (w - 1.0), h / (h - 1.0)])
        offset = np.array([0.5 / (w - 1.0), 0.5 / (h - 1.0)])
        node_uv = uv * scale - offset
        sampled = bilinear_sample(self.depth0[..., None], node_uv)
        return ad.reshape(sampled, (points.shape[0],))

    def detached(self) -> LearnedField:
        """A copy whose tensors are constants, for rendering without a tape."""
        weights = FieldWeights(
            self.weights.shape, {k: ad.constant(v.value) for k, v in self.weights.params.items()}
        )
        z = None if self.cond.z is None else ad.constant(self.cond.z.value)
        cond = ConditioningState(
            ad.constant(self.cond.xi.value), ad.constant(self.cond.features.value), z
        )
        return LearnedField(weights, cond, self.intr, self.bounds, self.depth0)

    def __call__(self, points: DiffTensor) -> SceneSample:
        lead = points.shape[:-1]
        flat = ad.reshape(points, (-1, 3))
        sample = scene_eval(
            self.weights,
            self.cond,
            flat,
            self.depth_at(flat),
            intr=self.intr,
            bounds=self.bounds,
        )
        return sample.reshape(lead)
