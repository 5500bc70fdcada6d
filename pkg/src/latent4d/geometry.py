"""Rigid transforms, camera models, pinhole projection and ray generation.

Conventions: right-handed coordinates, camera forward is -z and up is +y. A pose maps a body's
frame-0 coordinates to its frame-t coordinates, so a camera pose takes camera-space points to
world space. Image rows grow downwards. Angles are radians.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np
from numpy.typing import ArrayLike

from . import autodiff as ad
from .autodiff import Array, DiffTensor, TensorLike
from .errors import BehindCamera, OutOfBounds, OutOfRange, ShapeMismatch

CameraKind = Literal["general", "vehicle"]
MotionKind = Literal["planar", "se3"]

GENERAL_DOF = 5
VEHICLE_DOF = 2
PLANAR_DOF = 2
SE3_DOF = 6


@dataclass(frozen=True)
class PoseSE3:
    """A rigid transform p -> R p + t."""

    rotation: DiffTensor
    translation: DiffTensor

    @classmethod
    def identity(cls) -> PoseSE3:
        return cls(ad.constant(np.eye(3)), ad.constant(np.zeros(3)))

    @classmethod
    def from_arrays(cls, rotation: ArrayLike, translation: ArrayLike) -> PoseSE3:
        rot = ad.constant(rotation)
        trans = ad.constant(translation)
        if rot.shape != (3, 3) or trans.shape != (3,):
            raise ShapeMismatch(f"pose needs (3, 3) and (3,), got {rot.shape}, {trans.shape}")
        return cls(rot, trans)

    @classmethod
    def from_translation(cls, translation: ArrayLike) -> PoseSE3:
        return cls.from_arrays(np.eye(3), translation)

    def matrix(self) -> Array:
        m = np.eye(4)
        m[:3, :3] = self.rotation.value
        m[:3, 3] = self.translation.value
        return m

    def is_valid(self, tol: float = 1e-9) -> bool:
        r = self.rotation.value
        orthonormal = np.allclose(r.T @ r, np.eye(3), atol=tol, rtol=0.0)
        return bool(orthonormal and abs(np.linalg.det(r) - 1.0) <= tol)

    def apply(self, points: TensorLike) -> DiffTensor:
        """Transform points of shape (..., 3)."""
        return self.rotate(points) + self.translation

    def rotate(self, vectors: TensorLike) -> DiffTensor:
        v = ad.as_tensor(vectors)
        return ad.tsum(ad.reshape(v, (*v.shape, 1)) * ad.transpose(self.rotation), axis=-2)

    def apply_inverse(self, points: TensorLike) -> DiffTensor:
        """Apply the inverse transform, R^T (p - t), without forming it."""
        p = ad.as_tensor(points) - self.translation
        return ad.tsum(ad.reshape(p, (*p.shape, 1)) * self.rotation, axis=-2)


def pose_compose(a: PoseSE3, b: PoseSE3) -> PoseSE3:
    """The pose a∘b, i.e. p -> a(b(p))."""
    return PoseSE3(a.rotation @ b.rotation, a.rotate(b.translation) + a.translation)


def pose_inverse(a: PoseSE3) -> PoseSE3:
    rt = ad.transpose(a.rotation)
    return PoseSE3(rt, -(rt @ a.translation))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self) -> None:
        if self.fx <= 0 or self.fy <= 0:
            raise OutOfRange(f"focal lengths must be positive, got {self.fx}, {self.fy}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise OutOfRange(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height}"
            )

    @classmethod
    def from_fov(cls, width: int, height: int, fov_x: float) -> CameraIntrinsics:
        """Square pixels, principal point at the image center, horizontal field of view."""
        f = 0.5 * width / np.tan(0.5 * fov_x)
        return cls(float(f), float(f), width / 2.0, height / 2.0, width, height)

    def contains(self, q: ArrayLike) -> bool:
        x, y = np.asarray(q, dtype=np.float64)
        return bool(0.0 <= x <= self.width and 0.0 <= y <= self.height)


@dataclass(frozen=True)
class Ray:
    origin: Array
    direction: Array

    def at(self, s: float) -> Array:
        return self.origin + s * self.direction


@dataclass(frozen=True)
class RayBatch:
    """N rays; origins and directions are differentiable in the camera parameters."""

    origins: DiffTensor
    directions: DiffTensor
    pixels: Array

    def __len__(self) -> int:
        return int(self.pixels.shape[0])


def _camera_space(pose: PoseSE3, points: TensorLike) -> DiffTensor:
    return pose.apply_inverse(points)


def project(pose: PoseSE3, intr: CameraIntrinsics, p: ArrayLike) -> Array:
    """Pixel coordinates of the world point ``p`` seen from the camera at ``pose``."""
    pc = _camera_space(pose, np.asarray(p, dtype=np.float64)).value
    depth = -pc[2]
    if depth <= 0:
        raise BehindCamera(f"point {np.asarray(p).tolist()} has camera depth {depth}")
    return np.array([intr.cx + intr.fx * pc[0] / depth, intr.cy - intr.fy * pc[1] / depth])


def project_points(
    pose: PoseSE3, intr: CameraIntrinsics, points: TensorLike, min_depth: float = 1e-6
) -> tuple[DiffTensor, Array]:
    """Project points (..., 3); depth is clamped at ``min_depth``.

    Returns the pixel coordinates and a mask of points that were in front of the camera.
    """
    pc = _camera_space(pose, points)
    depth = -pc[..., 2]
    in_front = depth.value > min_depth
    depth = ad.maximum(depth, min_depth)
    u = intr.cx + intr.fx * pc[..., 0] / depth
    v = intr.cy - intr.fy * pc[..., 1] / depth
    return ad.stack([u, v], axis=-1), in_front


def _camera_directions(intr: CameraIntrinsics, pixels: Array) -> Array:
    d = np.stack(
        [
            (pixels[:, 0] - intr.cx) / intr.fx,
            -(pixels[:, 1] - intr.cy) / intr.fy,
            -np.ones(pixels.shape[0]),
        ],
        axis=-1,
    )
    return d / np.linalg.norm(d, axis=-1, keepdims=True)


def ray_for_pixel(pose: PoseSE3, intr: CameraIntrinsics, q: ArrayLike) -> Ray:
    if not intr.contains(q):
        raise OutOfBounds(f"pixel {np.asarray(q).tolist()} outside {intr.width}x{intr.height}")
    batch = rays_for_pixels(pose, intr, np.asarray(q, dtype=np.float64)[None, :])
    direction = batch.directions.value[0]
    return Ray(batch.origins.value[0].copy(), direction / np.linalg.norm(direction))


def rays_for_pixels(pose: PoseSE3, intr: CameraIntrinsics, pixels: ArrayLike) -> RayBatch:
    px = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    bad = (px[:, 0] < 0) | (px[:, 0] > intr.width) | (px[:, 1] < 0) | (px[:, 1] > intr.height)
    if np.any(bad):
        raise OutOfBounds(f"{int(bad.sum())} pixels outside {intr.width}x{intr.height}")
    directions = pose.rotate(_camera_directions(intr, px))
    origins = ad.broadcast_to(pose.translation, (px.shape[0], 3))
    return RayBatch(origins, directions, px)


def pixel_grid(intr: CameraIntrinsics) -> Array:
    """Pixel centers in row-major order, shape (H*W, 2) as (x, y)."""
    ys, xs = np.mgrid[0 : intr.height, 0 : intr.width]
    return np.stack([xs.ravel() + 0.5, ys.ravel() + 0.5], axis=-1).astype(np.float64)


# ---------------------------------------------------------------------------------------------
# Rotations from angles. Angles may carry a leading batch shape.


def _rotation(entries: list[list[TensorLike]], like: DiffTensor) -> DiffTensor:
    zeros = np.zeros(like.shape)

    def entry(e: TensorLike) -> DiffTensor:
        return e if isinstance(e, DiffTensor) else ad.constant(zeros + np.asarray(e))

    rows = [ad.stack([entry(e) for e in row], axis=-1) for row in entries]
    return ad.stack(rows, axis=-2)


def yaw_matrix(angle: TensorLike) -> DiffTensor:
    """Rotation about +y with forward (0, 0, -1) mapped to (sin a, 0, -cos a)."""
    a = ad.as_tensor(angle)
    c, s = ad.cos(a), ad.sin(a)
    return _rotation([[c, 0.0, -s], [0.0, 1.0, 0.0], [s, 0.0, c]], a)


def pitch_matrix(angle: TensorLike) -> DiffTensor:
    """Rotation about +x; positive pitch tilts the forward axis towards +y."""
    b = ad.as_tensor(angle)
    c, s = ad.cos(b), ad.sin(b)
    return _rotation([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]], b)


def roll_matrix(angle: TensorLike) -> DiffTensor:
    r = ad.as_tensor(angle)
    c, s = ad.cos(r), ad.sin(r)
    return _rotation([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]], r)


def pose_from_yaw_pitch(yaw: float, pitch: float, translation: ArrayLike) -> PoseSE3:
    """Pitch, then yaw, then translation."""
    rot = yaw_matrix(yaw) @ pitch_matrix(pitch)
    return PoseSE3(ad.constant(rot.value), ad.constant(translation))


def _with_identity_frame(
    rotations: DiffTensor, translations: DiffTensor
) -> tuple[DiffTensor, DiffTensor]:
    lead = rotations.shape[1:-2]
    eye = np.broadcast_to(np.eye(3), (1, *lead, 3, 3))
    zero = np.zeros((1, *lead, 3))
    return ad.concat([eye, rotations], axis=0), ad.concat([zero, translations], axis=0)


# ---------------------------------------------------------------------------------------------
# Camera and motion tracks


@dataclass(frozen=True)
class CameraTrack:
    """Per-frame camera poses Λ_0..Λ_L; Λ_0 is the identity."""

    rotations: DiffTensor
    translations: DiffTensor
    kind: CameraKind
    params: DiffTensor

    @property
    def num_frames(self) -> int:
        return self.rotations.shape[0]

    def pose(self, t: int) -> PoseSE3:
        return PoseSE3(self.rotations[t], self.translations[t])


@dataclass(frozen=True)
class MotionTrack:
    """Per-frame, per-component poses T_t^j; T_0^j is the identity."""

    rotations: DiffTensor
    translations: DiffTensor
    kind: MotionKind
    params: DiffTensor

    @property
    def num_frames(self) -> int:
        return self.rotations.shape[0]

    @property
    def num_components(self) -> int:
        return self.rotations.shape[1]

    def pose(self, t: int, j: int) -> PoseSE3:
        return PoseSE3(self.rotations[t, j], self.translations[t, j])

    def frame(self, t: int) -> tuple[DiffTensor, DiffTensor]:
        """Rotations (J, 3, 3) and translations (J, 3) at frame t."""
        return self.rotations[t], self.translations[t]


def camera_track_general(params: TensorLike) -> CameraTrack:
    """Five absolute values per future frame: x, y, z translation, yaw, pitch."""
    p = ad.as_tensor(params)
    if p.ndim != 2 or p.shape[1] != GENERAL_DOF:
        raise ShapeMismatch(f"general camera params must be (L, 5), got {p.shape}")
    rot = yaw_matrix(p[:, 3]) @ pitch_matrix(p[:, 4])
    rotations, translations = _with_identity_frame(rot, p[:, 0:3])
    return CameraTrack(rotations, translations, "general", p)


def camera_track_vehicle(speeds: TensorLike, azim_vel: TensorLike) -> CameraTrack:
    """Forward speed s_t and azimuthal velocity α_t per future frame, motion in the xz plane."""
    s = ad.as_tensor(speeds)
    alpha = ad.as_tensor(azim_vel)
    if s.ndim != 1 or s.shape != alpha.shape:
        raise ShapeMismatch(f"vehicle params must be two (L,) vectors: {s.shape}, {alpha.shape}")
    azimuth = ad.cumsum(alpha * s, axis=0)
    velocity = ad.stack([ad.sin(azimuth) * s, s * 0.0, -ad.cos(azimuth) * s], axis=-1)
    positions = ad.cumsum(velocity, axis=0)
    rotations, translations = _with_identity_frame(yaw_matrix(azimuth), positions)
    return CameraTrack(rotations, translations, "vehicle", ad.stack([s, alpha], axis=-1))


def camera_track_from_params(kind: CameraKind, params: TensorLike) -> CameraTrack:
    p = ad.as_tensor(params)
    if kind == "vehicle":
        return camera_track_vehicle(p[:, 0], p[:, 1])
    return camera_track_general(p)


def identity_camera(num_future: int, kind: CameraKind = "general") -> CameraTrack:
    dof = VEHICLE_DOF if kind == "vehicle" else GENERAL_DOF
    return camera_track_from_params(kind, np.zeros((num_future, dof)))


def camera_dof(kind: CameraKind) -> int:
    return VEHICLE_DOF if kind == "vehicle" else GENERAL_DOF


def motion_track_planar(params: TensorLike) -> MotionTrack:
    """xz translation per future frame and component, params of shape (L, J, 2)."""
    p = ad.as_tensor(params)
    if p.ndim != 3 or p.shape[2] != PLANAR_DOF:
        raise ShapeMismatch(f"planar motion params must be (L, J, 2), got {p.shape}")
    num_future, num_comp = p.shape[0], p.shape[1]
    translations = ad.stack([p[..., 0], p[..., 0] * 0.0, p[..., 1]], axis=-1)
    rot = ad.constant(np.broadcast_to(np.eye(3), (num_future, num_comp, 3, 3)))
    rotations, translations = _with_identity_frame(rot, translations)
    return MotionTrack(rotations, translations, "planar", p)


def motion_track_se3(params: TensorLike) -> MotionTrack:
    """Translation plus yaw, pitch, roll per future frame and component, shape (L, J, 6)."""
    p = ad.as_tensor(params)
    if p.ndim != 3 or p.shape[2] != SE3_DOF:
        raise ShapeMismatch(f"se3 motion params must be (L, J, 6), got {p.shape}")
    rot = yaw_matrix(p[..., 3]) @ pitch_matrix(p[..., 4]) @ roll_matrix(p[..., 5])
    rotations, translations = _with_identity_frame(rot, p[..., 0:3])
    return MotionTrack(rotations, translations, "se3", p)


def motion_track_from_params(kind: MotionKind, params: TensorLike) -> MotionTrack:
    return motion_track_se3(params) if kind == "se3" else motion_track_planar(params)


def motion_dof(kind: MotionKind) -> int:
    return SE3_DOF if kind == "se3" else PLANAR_DOF


def identity_motion(
    num_future: int, num_components: int, kind: MotionKind = "planar"
) -> MotionTrack:
    return motion_track_from_params(kind, np.zeros((num_future, num_components, motion_dof(kind))))


def inverse_transform_points(
    rotations: DiffTensor, translations: DiffTensor, points: DiffTensor
) -> DiffTensor:
    """Map points (..., 3) through the inverse of each of J poses, giving (..., J, 3)."""
    rel = ad.reshape(points, (*points.shape[:-1], 1, 3)) - translations
    return ad.tsum(ad.reshape(rel, (*rel.shape, 1)) * rotations, axis=-2)


def transform_points(
    rotations: DiffTensor, translations: DiffTensor, points: DiffTensor
) -> DiffTensor:
    """Map points (..., 3) through each of J poses, giving (..., J, 3)."""
    p = ad.reshape(points, (*points.shape[:-1], 1, 3, 1))
    return ad.tsum(p * ad.transpose(rotations, (0, 2, 1)), axis=-2) + translations
