"""Pytest fixtures for latent4d tests."""

from __future__ import annotations

import os
import tempfile
from collections.abc import Generator
from dataclasses import replace
from pathlib import Path
from unittest.mock import patch

import pytest

from latent4d.config import RunConfig, with_overrides
from latent4d.geometry import CameraIntrinsics
from latent4d.seeding import rng_for
from latent4d.synth import ClipSample, SyntheticScene, intrinsics_for, load_scene, make_clip

# Small enough that a full objective evaluates in well under a second.
SMALL_OVERRIDES = {
    "image_width": 16,
    "image_height": 16,
    "num_future_frames": 2,
    "z_dim": 4,
    "hidden_width": 12,
    "hidden_layers": 2,
    "num_bands": 2,
    "feature_channels": 3,
    "feature_grid": 4,
    "embedding_dim": 6,
    "cond_resolution": 16,
    "cond_channels": 4,
    "decoder_width": 8,
    "encoder_resolution": 8,
    "encoder_channels": 4,
    "samples_per_ray": 12,
    "rays_per_frame": 24,
    "tv_patch": 4,
    "batch_size": 1,
    "log_every": 1,
    "checkpoint_every": 0,
    "oracle_samples": 48,
    "keypoints_per_clip": 8,
    "num_views": 3,
    "num_clips": 2,
}


@pytest.fixture
def temp_dir() -> Generator[Path, None, None]:
    """A temporary directory that doubles as L4D_HOME."""
    with tempfile.TemporaryDirectory() as tmpdir:
        with patch.dict(os.environ, {"L4D_HOME": str(Path(tmpdir) / "home")}):
            yield Path(tmpdir)


@pytest.fixture
def small_config() -> RunConfig:
    """A tiny run configuration for fast tests."""
    return with_overrides(RunConfig(), SMALL_OVERRIDES)


@pytest.fixture
def small_intr(small_config: RunConfig) -> CameraIntrinsics:
    return intrinsics_for(small_config.model)


@pytest.fixture(scope="session")
def dyn_scene() -> SyntheticScene:
    return load_scene("dyn2cpt")


@pytest.fixture
def dyn_config(small_config: RunConfig, dyn_scene: SyntheticScene) -> RunConfig:
    model = replace(small_config.model, component_count=dyn_scene.num_components)
    return replace(small_config, model=model, data=replace(small_config.data, scene="dyn2cpt"))


@pytest.fixture
def dyn_clip(dyn_config: RunConfig, dyn_scene: SyntheticScene) -> ClipSample:
    return make_clip(
        dyn_scene,
        dyn_config.model,
        dyn_config.data.keypoints_per_clip,
        rng_for(0, "test", "clip"),
        dyn_config.data.oracle_samples,
    )
