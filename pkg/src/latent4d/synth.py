"""Analytic synthetic scenes with exact ground truth.

A scene is a set of smooth-density spheres and boxes, each attached to a motion component,
plus ground-truth component and camera motion. The analytic field doubles as an oracle scene
function, so ground-truth frames, depth, flow, segmentation and keypoint tracks all come from
the same renderer the model is trained with.

Scene files use the run-config grammar with ``[sphere]``, ``[box]``, ``[component]`` and
``[camera]`` sections::

    components = 2
    [sphere] center=0.8,0,-4 radius=0.5 color=0.9,0.2,0.2 component=2
    [component] id=2 velocity=0.1,0,0
    [camera] kind=general translation_rate=0.05,0,0
"""

from __future__ import annotations

import logging
import math
from collections.abc import Sequence
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike
from skimage.color import hsv2rgb, rgb2hsv

from . import autodiff as ad
from .autodiff import Array, DiffTensor, TensorLike
from .config import ModelConfig, RenderConfig, parse_key_values
from .errors import BehindCamera, ConfigError, InvalidRange
from .field import SceneBounds, SceneSample
from .geometry import (
    CameraIntrinsics,
    CameraTrack,
    MotionTrack,
    PoseSE3,
    camera_track_general,
    camera_track_vehicle,
    identity_motion,
    motion_track_se3,
    pose_from_yaw_pitch,
    project,
)
from .losses import KeypointTrack
from .render import FrameBuffer, render_image, render_rays
from .seeding import rng_for

logger = logging.getLogger(__name__)

PrimitiveKind = Literal["sphere", "box"]
CameraMotionKind = Literal["static", "general", "vehicle"]

DEFAULT_FALLOFF = 0.05
DEFAULT_AMPLITUDE = 25.0
ORACLE_SAMPLES = 512
SCENE_NAMES = ("static2", "dyn2cpt", "vehicle")
CAMERA_KINDS: dict[str, CameraMotionKind] = {
    "static": "static",
    "general": "general",
    "vehicle": "vehicle",
}


@dataclass(frozen=True)
class Primitive:
    """A sphere (size = radius) or box (size = half extents) of smooth density.

    Density is A·s²(3 - 2s) with s = clamp(-sdf / falloff + 1/2, 0, 1), so it reaches the
    amplitude A one half falloff inside the surface and vanishes one half falloff outside.
    """

    kind: PrimitiveKind
    center: tuple[float, ...]
    size: tuple[float, ...]
    color: tuple[float, ...]
    amplitude: float = DEFAULT_AMPLITUDE
    falloff: float = DEFAULT_FALLOFF
    component: int = 1

    def sdf(self, p: DiffTensor) -> DiffTensor:
        rel = p - np.asarray(self.center)
        if self.kind == "sphere":
            return ad.sqrt(ad.tsum(rel * rel, axis=-1) + 1e-12) - self.size[0]
        q = ad.tabs(rel) - np.asarray(self.size)
        outside = ad.relu(q)
        outer = ad.sqrt(ad.tsum(outside * outside, axis=-1) + 1e-12)
        inner = ad.minimum(ad.maximum(ad.maximum(q[..., 0], q[..., 1]), q[..., 2]), 0.0)
        return outer + inner

    def density(self, p: DiffTensor) -> DiffTensor:
        s = ad.clamp(self.sdf(p) * (-1.0 / self.falloff) + 0.5, 0.0, 1.0)
        return s * s * (3.0 - 2.0 * s) * self.amplitude

    def extent_corners(self) -> Array:
        c, h = np.asarray(self.center), np.asarray(self.size) + self.falloff / 2.0
        if self.kind == "sphere":
            h = np.full(3, self.size[0] + self.falloff / 2.0)
        signs = np.array([[x, y, z] for x in (-1, 1) for y in (-1, 1) for z in (-1, 1)])
        return c + signs * h


@dataclass(frozen=True)
class ComponentMotion:
    """Constant per-frame translation and yaw rate of one component."""

    velocity: tuple[float, ...] = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0


@dataclass(frozen=True)
class CameraMotion:
    kind: CameraMotionKind = "static"
    translation_rate: tuple[float, ...] = (0.0, 0.0, 0.0)
    yaw_rate: float = 0.0
    pitch_rate: float = 0.0
    speed: float = 0.0
    azimuth_rate: float = 0.0


@dataclass(frozen=True)
class SyntheticScene:
    name: str
    primitives: tuple[Primitive, ...]
    num_components: int
    component_motion: tuple[ComponentMotion, ...]
    camera_motion: CameraMotion = field(default_factory=CameraMotion)
    bounds: SceneBounds = SceneBounds((0.0, 0.0, -4.0), 3.0)

    def __post_init__(self) -> None:
        if self.num_components < 1:
            raise ConfigError("a scene needs at least one component")
        if len(self.component_motion) != self.num_components:
            raise ConfigError("one motion entry per component required")
        for prim in self.primitives:
            if prim.amplitude < 0 or prim.falloff <= 0:
                raise ConfigError(f"{prim.kind} needs amplitude >= 0 and falloff > 0")
            if not 1 <= prim.component <= self.num_components:
                raise ConfigError(
                    f"{prim.kind} component {prim.component} outside 1..{self.num_components}"
                )
            if not self.bounds.contains(prim.extent_corners()):
                raise ConfigError(f"{prim.kind} at {prim.center} leaves the scene volume")

    def motion_track(self, num_future: int) -> MotionTrack:
        steps = np.arange(1, num_future + 1, dtype=np.float64)[:, None]
        params = np.zeros((num_future, self.num_components, 6))
        for j, m in enumerate(self.component_motion):
            params[:, j, 0:3] = steps * np.asarray(m.velocity)
            params[:, j, 3] = steps[:, 0] * m.yaw_rate
        return motion_track_se3(params)

    def camera_track(self, num_future: int) -> CameraTrack:
        cam = self.camera_motion
        steps = np.arange(1, num_future + 1, dtype=np.float64)
        if cam.kind == "vehicle":
            return camera_track_vehicle(
                np.full(num_future, cam.speed), np.full(num_future, cam.azimuth_rate)
            )
        params = np.zeros((num_future, 5))
        params[:, 0:3] = steps[:, None] * np.asarray(cam.translation_rate)
        params[:, 3] = steps * cam.yaw_rate
        params[:, 4] = steps * cam.pitch_rate
        return camera_track_general(params)

    def scaled(self, component_scale: Sequence[float], camera_scale: float) -> SyntheticScene:
        """The same scene with each component's and the camera's rates scaled."""
        motions = tuple(
            ComponentMotion(tuple(np.asarray(m.velocity) * s), m.yaw_rate * s)
            for m, s in zip(self.component_motion, component_scale, strict=True)
        )
        cam = self.camera_motion
        camera = replace(
            cam,
            translation_rate=tuple(np.asarray(cam.translation_rate) * camera_scale),
            yaw_rate=cam.yaw_rate * camera_scale,
            pitch_rate=cam.pitch_rate * camera_scale,
            speed=cam.speed * camera_scale,
        )
        return replace(self, component_motion=motions, camera_motion=camera)


# ---------------------------------------------------------------------------------------------
# Scene files


def _floats(text: str, n: int, key: str) -> tuple[float, ...]:
    try:
        values = tuple(float(v) for v in text.split(","))
    except ValueError as exc:
        raise ConfigError(f"bad number in {key} = {text!r}") from exc
    if len(values) != n:
        raise ConfigError(f"{key} needs {n} values, got {len(values)}")
    return values


def _take(entries: dict[str, str], allowed: set[str], section: str) -> dict[str, str]:
    unknown = set(entries) - allowed
    if unknown:
        raise ConfigError(f"unknown key(s) in [{section}]: {', '.join(sorted(unknown))}")
    return entries


def parse_scene(text: str, name: str = "scene") -> SyntheticScene:
    blocks = parse_key_values(text)
    top = _take(blocks[0][1], {"name", "components", "falloff", "amplitude"}, "top level")
    num_components = int(top.get("components", "1"))
    falloff = float(top.get("falloff", DEFAULT_FALLOFF))
    amplitude = float(top.get("amplitude", DEFAULT_AMPLITUDE))
    primitives: list[Primitive] = []
    motions = [ComponentMotion() for _ in range(num_components)]
    camera = CameraMotion()
    prim_keys = {"center", "radius", "size", "color", "amplitude", "falloff", "component"}
    for section, entries in blocks[1:]:
        if section in ("sphere", "box"):
            e = _take(entries, prim_keys, section)
            if section == "sphere":
                r = float(e.get("radius", "0.5"))
                size: tuple[float, ...] = (r, r, r)
            else:
                size = _floats(e.get("size", "0.5,0.5,0.5"), 3, "size")
            kind: PrimitiveKind = "sphere" if section == "sphere" else "box"
            primitives.append(
                Primitive(
                    kind=kind,
                    center=_floats(e.get("center", "0,0,-4"), 3, "center"),
                    size=size,
                    color=_floats(e.get("color", "0.5,0.5,0.5"), 3, "color"),
                    amplitude=float(e.get("amplitude", amplitude)),
                    falloff=float(e.get("falloff", falloff)),
                    component=int(e.get("component", "1")),
                )
            )
        elif section == "component":
            e = _take(entries, {"id", "velocity", "yaw_rate"}, section)
            idx = int(e.get("id", "1")) - 1
            if not 0 <= idx < num_components:
                raise ConfigError(f"[component] id {idx + 1} outside 1..{num_components}")
            motions[idx] = ComponentMotion(
                _floats(e.get("velocity", "0,0,0"), 3, "velocity"),
                float(e.get("yaw_rate", "0")),
            )
        elif section == "camera":
            e = _take(
                entries,
                {"kind", "translation_rate", "yaw_rate", "pitch_rate", "speed", "azimuth_rate"},
                section,
            )
            camera_kind = e.get("kind", "general")
            if camera_kind not in CAMERA_KINDS:
                raise ConfigError(f"unknown camera kind {camera_kind!r}")
            rate = e.get("translation_rate", "0,0,0")
            camera = CameraMotion(
                kind=CAMERA_KINDS[camera_kind],
                translation_rate=_floats(rate, 3, "translation_rate"),
                yaw_rate=float(e.get("yaw_rate", "0")),
                pitch_rate=float(e.get("pitch_rate", "0")),
                speed=float(e.get("speed", "0")),
                azimuth_rate=float(e.get("azimuth_rate", "0")),
            )
        else:
            raise ConfigError(f"unknown scene section [{section}]")
    return SyntheticScene(
        name=top.get("name", name),
        primitives=tuple(primitives),
        num_components=num_components,
        component_motion=tuple(motions),
        camera_motion=camera,
    )


def load_scene(name_or_path: str | Path) -> SyntheticScene:
    """Load a shipped scene by name or a scene file by path."""
    path = Path(name_or_path)
    if path.suffix == ".cfg" or path.exists():
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read scene {path}: {exc}") from exc
        return parse_scene(text, path.stem)
    if str(name_or_path) not in SCENE_NAMES:
        raise ConfigError(f"unknown scene {name_or_path!r}; shipped: {', '.join(SCENE_NAMES)}")
    text = resources.files("latent4d").joinpath(f"scenes/{name_or_path}.cfg").read_text("utf-8")
    return parse_scene(text, str(name_or_path))


# ---------------------------------------------------------------------------------------------
# Analytic field


def _evaluate(
    primitives: Sequence[Primitive],
    points: Sequence[DiffTensor],
    lead: tuple[int, ...],
    j_count: int,
) -> SceneSample:
    """Combine per-primitive densities; ``points[i]`` is where primitive i is evaluated."""
    dens = [prim.density(p) for prim, p in zip(primitives, points, strict=True)]
    if not dens:
        zero = ad.constant(np.zeros(lead))
        weights = np.zeros((*lead, j_count))
        weights[..., 0] = 1.0
        return SceneSample(zero, ad.constant(np.zeros((*lead, 3))), ad.constant(weights))
    stacked = ad.stack(dens, axis=-1)
    rho = ad.tsum(stacked, axis=-1)
    colors = np.stack([np.asarray(p.color) for p in primitives])
    mixed = ad.matmul(stacked, colors)
    has = rho.value > 0
    safe = ad.where(has, rho, 1.0)
    color = ad.where(has[..., None], mixed / ad.reshape(safe, (*lead, 1)), 0.0)
    dominant = np.argmax(stacked.value, axis=-1)
    comp = np.array([p.component - 1 for p in primitives])[dominant]
    comp = np.where(has, comp, 0)
    weights = np.eye(j_count)[comp]
    return SceneSample(rho, color, ad.constant(weights))


def scene_density(
    scene: SyntheticScene, p: TensorLike, t: int, motion: MotionTrack | None = None
) -> SceneSample:
    """Exact ρ, c and one-hot ω of the scene at world points ``p`` (..., 3) in frame ``t``."""
    pts = ad.as_tensor(p)
    if motion is None:
        motion = scene.motion_track(max(t, 1))
    per_prim = []
    for prim in scene.primitives:
        pose = motion.pose(t, prim.component - 1)
        per_prim.append(pose.apply_inverse(pts))
    return _evaluate(scene.primitives, per_prim, pts.shape[:-1], scene.num_components)


@dataclass(frozen=True)
class OracleField:
    """The analytic scene at frame 0, usable wherever a learned field is."""

    scene: SyntheticScene

    @property
    def num_components(self) -> int:
        return self.scene.num_components

    def detached(self) -> OracleField:
        return self

    def __call__(self, points: DiffTensor) -> SceneSample:
        pts = ad.as_tensor(points)
        prims = self.scene.primitives
        return _evaluate(prims, [pts] * len(prims), pts.shape[:-1], self.num_components)


def oracle_field(scene: SyntheticScene) -> OracleField:
    return OracleField(scene)


def oracle_render_config(scene: SyntheticScene, samples: int) -> RenderConfig:
    """Uniform samples through the scene volume only, far enough apart to resolve the falloff.

    Ground truth takes at least ``ORACLE_SAMPLES`` samples per ray. Smaller counts are a coarse
    override for fast tests and previews; they are accepted with a warning.
    """
    if samples < 2:
        raise InvalidRange(f"oracle rendering needs at least 2 samples per ray, got {samples}")
    if samples < ORACLE_SAMPLES:
        logger.warning(
            "coarse oracle render: %d samples per ray, ground truth needs %d",
            samples,
            ORACLE_SAMPLES,
        )
    reach = scene.bounds.extent * math.sqrt(3.0)
    dist = scene.bounds.center_distance
    return RenderConfig(
        near=max(0.05, dist - reach),
        far=dist + reach,
        samples_per_ray=samples,
        jitter=False,
        chunk_rays=512,
    )


def oracle_render(
    scene: SyntheticScene,
    camera: CameraTrack,
    motion: MotionTrack,
    t: int,
    intr: CameraIntrinsics,
    samples: int = ORACLE_SAMPLES,
    threads: int = 1,
    pixels: ArrayLike | None = None,
) -> FrameBuffer:
    """Ground-truth frame ``t`` with depth, flow and segmentation."""
    config = oracle_render_config(scene, samples)
    return render_image(
        OracleField(scene), camera, motion, t, intr, config, pixels=pixels, threads=threads
    )


def oracle_depth_at(
    scene: SyntheticScene,
    camera: CameraTrack,
    motion: MotionTrack,
    t: int,
    intr: CameraIntrinsics,
    pixels: ArrayLike,
    samples: int = ORACLE_SAMPLES,
) -> Array:
    """Expected ray distance at pixel locations (N, 2); zero where nothing is hit."""
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    if px.shape[0] == 0:
        return np.zeros(0)
    config = oracle_render_config(scene, samples)
    batch = render_rays(OracleField(scene), camera, motion, t, intr, px, config)
    return batch.depth.value.copy()


def track_from_poses(poses: Sequence[PoseSE3]) -> CameraTrack:
    """A camera track visiting fixed poses; frame 0 is the first pose."""
    rot = ad.constant(np.stack([p.rotation.value for p in poses]))
    trans = ad.constant(np.stack([p.translation.value for p in poses]))
    return CameraTrack(rot, trans, "general", ad.constant(np.zeros((len(poses) - 1, 5))))


# ---------------------------------------------------------------------------------------------
# Keypoints


def _surface_points(prim: Primitive, count: int, rng: np.random.Generator) -> Array:
    if prim.kind == "sphere":
        d = rng.standard_normal((count, 3))
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        return np.asarray(prim.center) + d * prim.size[0]
    half = np.asarray(prim.size)
    pts = rng.uniform(-1.0, 1.0, size=(count, 3)) * half
    face = rng.integers(0, 3, size=count)
    sign = rng.choice([-1.0, 1.0], size=count)
    pts[np.arange(count), face] = sign * half[face]
    return np.asarray(prim.center) + pts


def oracle_keypoints(
    scene: SyntheticScene,
    camera: CameraTrack,
    motion: MotionTrack,
    intr: CameraIntrinsics,
    count: int,
    rng: np.random.Generator,
    samples: int = ORACLE_SAMPLES,
) -> list[KeypointTrack]:
    """Surface-attached points projected through the true motion, dropped when hidden.

    A point counts as visible in a frame when it projects inside the image, in front of the
    camera, and no deeper than the oracle depth there (1% relative tolerance plus the falloff
    width). Only tracks visible in frame 0 are returned.
    """
    if not scene.primitives or count <= 0:
        return []
    weights = np.array([p.amplitude * np.prod(p.size) for p in scene.primitives])
    owner = rng.choice(len(scene.primitives), size=count, p=weights / weights.sum())
    points = np.empty((count, 3))
    for i, prim in enumerate(scene.primitives):
        sel = owner == i
        points[sel] = _surface_points(prim, int(sel.sum()), rng)
    num_frames = camera.num_frames
    positions = np.full((count, num_frames, 2), np.nan)
    distance0 = np.full(count, np.nan)
    for t in range(num_frames):
        pose = camera.pose(t)
        world = np.stack(
            [
                motion.pose(t, scene.primitives[owner[n]].component - 1).apply(points[n]).value
                for n in range(count)
            ]
        )
        uv = np.full((count, 2), np.nan)
        for n in range(count):
            try:
                q = project(pose, intr, world[n])
            except BehindCamera:
                continue
            if intr.contains(q):
                uv[n] = q
        seen = np.all(np.isfinite(uv), axis=-1)
        if t > 0:
            seen &= np.isfinite(positions[:, 0, 0])
        idx = np.nonzero(seen)[0]
        if idx.size:
            depth = oracle_depth_at(scene, camera, motion, t, intr, uv[idx], samples)
            dist = np.linalg.norm(world[idx] - pose.translation.value, axis=-1)
            slack = depth * 0.01 + max(p.falloff for p in scene.primitives)
            visible = (depth > 0) & (dist <= depth + slack)
            idx = idx[visible]
            positions[idx, t] = uv[idx]
            if t == 0:
                distance0[idx] = dist[visible]
    tracks = []
    for n in range(count):
        if np.all(np.isfinite(positions[n, 0])):
            comp = scene.primitives[owner[n]].component - 1
            tracks.append(KeypointTrack(n, positions[n].copy(), float(distance0[n]), comp))
    logger.debug("kept %d of %d keypoint tracks", len(tracks), count)
    return tracks


# ---------------------------------------------------------------------------------------------
# Augmentation


@dataclass(frozen=True)
class AugmentParams:
    flip: bool = False
    hue: float = 0.0
    saturation: float = 0.0
    value: float = 0.0
    contrast: float = 1.0

    @classmethod
    def draw(cls, rng: np.random.Generator) -> AugmentParams:
        return cls(
            flip=bool(rng.uniform() < 0.5),
            hue=float(rng.uniform(-0.05, 0.05)),
            saturation=float(rng.uniform(-0.2, 0.1)),
            value=float(rng.uniform(-0.1, 0.1)),
            contrast=float(rng.uniform(0.8, 1.2)),
        )


@dataclass
class AugmentedClip:
    frames: Array
    tracks: list[KeypointTrack] | None = None
    flows: Array | None = None
    depths: Array | None = None
    params: AugmentParams = field(default_factory=AugmentParams)


def adjust_color(frame: Array, params: AugmentParams) -> Array:
    """HSV shift with clamping (hue clamped, not wrapped), then contrast about the mean."""
    out = frame
    if params.hue or params.saturation or params.value:
        hsv = rgb2hsv(frame)
        hsv = np.clip(hsv + np.array([params.hue, params.saturation, params.value]), 0.0, 1.0)
        out = hsv2rgb(hsv)
    if params.contrast != 1.0:
        mu = out.mean()
        out = (out - mu) * params.contrast + mu
    return np.clip(out, 0.0, 1.0)


def augment_clip(
    frames: ArrayLike,
    rng: np.random.Generator | int,
    tracks: Sequence[KeypointTrack] | None = None,
    flows: ArrayLike | None = None,
    depths: ArrayLike | None = None,
    params: AugmentParams | None = None,
) -> AugmentedClip:
    """Apply one random flip/color draw to every frame of a clip (F, H, W, 3).

    A flip mirrors keypoint x-coordinates (x -> W - x), flow maps and their x-channel.
    """
    gen = np.random.default_rng(rng) if isinstance(rng, int) else rng
    p = params or AugmentParams.draw(gen)
    clip = np.asarray(frames, dtype=np.float64)
    width = clip.shape[2]
    fl = None if flows is None else np.asarray(flows, dtype=np.float64).copy()
    dp = None if depths is None else np.asarray(depths, dtype=np.float64).copy()
    new_tracks = None if tracks is None else list(tracks)
    if p.flip:
        clip = clip[:, :, ::-1]
        if fl is not None:
            fl = fl[:, :, ::-1].copy()
            fl[..., 0] = -fl[..., 0]
        if dp is not None:
            dp = dp[:, :, ::-1].copy()
        if new_tracks is not None:
            flipped = []
            for tr in new_tracks:
                pos = tr.positions.copy()
                pos[:, 0] = width - pos[:, 0]
                flipped.append(replace(tr, positions=pos))
            new_tracks = flipped
    out = np.stack([adjust_color(f, p) for f in clip])
    return AugmentedClip(out, new_tracks, fl, dp, p)


# ---------------------------------------------------------------------------------------------
# Datasets


def intrinsics_for(model: ModelConfig) -> CameraIntrinsics:
    return CameraIntrinsics.from_fov(
        model.image_width, model.image_height, math.radians(model.fov_degrees)
    )


def static_view_pose(angle: float, distance: float) -> PoseSE3:
    """Camera on a circle around (0, 0, -distance), looking at it; angle 0 is the identity."""
    forward = np.array([math.sin(angle), 0.0, -math.cos(angle)])
    target = np.array([0.0, 0.0, -distance])
    return pose_from_yaw_pitch(angle, 0.0, target - distance * forward)


@dataclass
class StaticDataset:
    scene: SyntheticScene
    intr: CameraIntrinsics
    poses: list[PoseSE3]
    frames: Array
    depths: Array
    heldout_pose: PoseSE3
    heldout_frame: Array
    heldout_depth: Array

    @property
    def num_views(self) -> int:
        return len(self.poses)


def view_angles(num_views: int, spread: float = 0.4) -> Array:
    if num_views == 1:
        return np.zeros(1)
    return np.concatenate([[0.0], np.linspace(-spread, spread, num_views - 1)])


def make_static_dataset(
    scene: SyntheticScene,
    model: ModelConfig,
    num_views: int,
    samples: int = ORACLE_SAMPLES,
    threads: int = 1,
    heldout_angle: float = 0.15,
) -> StaticDataset:
    """Views of a static scene on an arc around the scene center, plus one held-out view."""
    intr = intrinsics_for(model)
    dist = scene.bounds.center_distance
    poses = [static_view_pose(a, dist) for a in view_angles(num_views)]
    heldout = static_view_pose(heldout_angle, dist)
    track = track_from_poses([*poses, heldout])
    motion = identity_motion(track.num_frames - 1, scene.num_components)
    config = oracle_render_config(scene, samples)
    frames, depths = [], []
    for t in range(track.num_frames):
        field_ = OracleField(scene)
        buf = render_image(field_, track, motion, t, intr, config, flow=False, threads=threads)
        frames.append(buf.rgb)
        depths.append(buf.depth)
    logger.info("rendered %d static views of %s", num_views, scene.name)
    return StaticDataset(
        scene=scene,
        intr=intr,
        poses=poses,
        frames=np.stack(frames[:-1]),
        depths=np.stack(depths[:-1]),
        heldout_pose=heldout,
        heldout_frame=frames[-1],
        heldout_depth=depths[-1],
    )


@dataclass
class ClipSample:
    """One clip of L + 1 frames with its ground truth."""

    frames: Array
    depths: Array
    flows: Array
    segmentation: Array
    camera: CameraTrack
    motion: MotionTrack
    tracks: list[KeypointTrack]

    @property
    def num_frames(self) -> int:
        return int(self.frames.shape[0])


@dataclass
class ClipDataset:
    scene: SyntheticScene
    intr: CameraIntrinsics
    clips: list[ClipSample]

    def __len__(self) -> int:
        return len(self.clips)


def make_clip(
    scene: SyntheticScene,
    model: ModelConfig,
    keypoints: int,
    rng: np.random.Generator,
    samples: int = ORACLE_SAMPLES,
    threads: int = 1,
) -> ClipSample:
    intr = intrinsics_for(model)
    camera = scene.camera_track(model.num_future_frames)
    motion = scene.motion_track(model.num_future_frames)
    bufs = [
        oracle_render(scene, camera, motion, t, intr, samples, threads)
        for t in range(camera.num_frames)
    ]
    tracks = oracle_keypoints(scene, camera, motion, intr, keypoints, rng, samples)
    return ClipSample(
        frames=np.stack([b.rgb for b in bufs]),
        depths=np.stack([b.depth for b in bufs]),
        flows=np.stack([b.flow for b in bufs]),
        segmentation=np.stack([b.segmentation for b in bufs]),
        camera=camera,
        motion=motion,
        tracks=tracks,
    )


def make_clip_dataset(
    scene: SyntheticScene,
    model: ModelConfig,
    num_clips: int,
    seed: int,
    keypoints: int = 64,
    samples: int = ORACLE_SAMPLES,
    threads: int = 1,
    vary: bool = True,
) -> ClipDataset:
    """Clips of the scene; with ``vary`` each clip rescales the component and camera rates.

    Component rates are scaled by a draw from [-1, 1] (so the same first frame has many
    futures); camera rates by a draw from [0.5, 1.5]. Clip 0 always uses the scene as written.
    """
    clips = []
    for n in range(num_clips):
        rng = rng_for(seed, "clip", n)
        variant = scene
        if vary and n > 0:
            comp_scale = [1.0] + list(rng.uniform(-1.0, 1.0, size=scene.num_components - 1))
            variant = scene.scaled(comp_scale, float(rng.uniform(0.5, 1.5)))
        clips.append(make_clip(variant, model, keypoints, rng, samples, threads))
    logger.info("rendered %d clips of %s", num_clips, scene.name)
    return ClipDataset(scene, intrinsics_for(model), clips)
