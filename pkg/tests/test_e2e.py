"""End-to-end integration tests.

These tests exercise the full flow (synth -> fit -> render -> eval) through the CLI, plus
longer fits that score the trained models.

Run with: pytest tests/test_e2e.py -v -m e2e
Skip with: pytest -v -m "not e2e"
"""

from __future__ import annotations

from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from latent4d.cli import EXIT_OK, main
from latent4d.config import RunConfig, dump_config, with_overrides
from latent4d.formats import read_csv, read_training_log
from latent4d.metrics import psnr
from latent4d.seeding import rng_for
from latent4d.state import RunStateManager
from latent4d.synth import (
    ClipDataset,
    SyntheticScene,
    intrinsics_for,
    load_scene,
    make_clip,
    make_clip_dataset,
    make_static_dataset,
)
from latent4d.train import ObjectiveTerms, fit_dynamic, fit_static, fit_vae, reconstruction_nll
from latent4d.vae import encode_clip, sample_prior

pytestmark = pytest.mark.e2e


@pytest.fixture
def cfg(temp_dir: Path, small_config: RunConfig) -> str:
    path = temp_dir / "e2e.cfg"
    config = with_overrides(small_config, {"checkpoint_every": 2, "learning_rate": 1e-3})
    path.write_text(dump_config(config), encoding="utf-8")
    return str(path)


class TestVideoPipeline:
    """Train the video model, sample futures and score them."""

    def test_synth_fit_sample_eval(
        self, temp_dir: Path, cfg: str, capsys: pytest.CaptureFixture[str]
    ) -> None:
        common = ["--config", cfg, "--scene", "dyn2cpt", "--quiet"]
        gt = temp_dir / "gt"
        assert main(["synth", *common, "--out", str(gt)]) == EXIT_OK

        assert main(["fit-vae", *common, "--run", "vae", "--steps", "4"]) == EXIT_OK
        mgr = RunStateManager()
        state = mgr.load("vae")
        assert state.steps_done == 4
        assert sorted(c.step for c in state.checkpoints) == [2, 4]
        rows = read_training_log(mgr.log_path("vae"))
        assert [r["step"] for r in rows] == [0.0, 1.0, 2.0, 3.0]
        assert all(np.isfinite(r["total"]) for r in rows)

        pred = temp_dir / "pred"
        ckpt = state.latest_checkpoint()
        assert ckpt is not None
        render = ["render", "--checkpoint", ckpt.path, "--samples", "2", "--out", str(pred)]
        assert main([*render, "--quiet"]) == EXIT_OK
        assert len(list((pred / "clip001" / "sample01").glob("frame*.ppm"))) == 3

        capsys.readouterr()
        assert main(["eval", "--pred", str(pred), "--gt", str(gt)]) == EXIT_OK
        assert "2 clips" in capsys.readouterr().out
        report = read_csv(pred / "report.csv")
        assert [r["clip"] for r in report] == ["0", "1", "mean", "std"]
        assert all(0.0 < float(r["psnr"]) <= 100.0 for r in report[:2])
        assert all(int(r["samples"]) == 2 for r in report[:2])

    def test_resume_matches_uninterrupted_run(self, temp_dir: Path, cfg: str) -> None:
        """Stopping at a checkpoint and resuming reproduces the same final parameters."""
        common = ["--config", cfg, "--scene", "dyn2cpt", "--quiet"]
        assert main(["fit-vae", *common, "--run", "whole", "--steps", "4"]) == EXIT_OK
        assert main(["fit-vae", *common, "--run", "split", "--steps", "2"]) == EXIT_OK
        assert main(["fit-vae", *common, "--run", "split", "--steps", "4", "--resume"]) == 0

        mgr = RunStateManager()
        whole = read_training_log(mgr.log_path("whole"))
        split = read_training_log(mgr.log_path("split"))
        assert [r["total"] for r in split] == pytest.approx([r["total"] for r in whole])


class TestStaticPipeline:
    """Static fits from the command line."""

    def test_same_seed_same_checkpoint_bytes(self, temp_dir: Path, cfg: str) -> None:
        common = ["fit-static", "--config", cfg, "--scene", "static2", "--steps", "3", "-q"]
        assert main([*common, "--run", "a", "--seed", "5"]) == EXIT_OK
        assert main([*common, "--run", "b", "--seed", "5"]) == EXIT_OK
        mgr = RunStateManager()
        first = mgr.checkpoint_path("a", 3).read_bytes()
        assert first == mgr.checkpoint_path("b", 3).read_bytes()
        assert main([*common, "--run", "c", "--seed", "6"]) == EXIT_OK
        assert mgr.checkpoint_path("c", 3).read_bytes() != first


class TestDynamicPipeline:
    """Recover the motion of a clip with the analytic field held fixed."""

    def test_keypoint_fit_reduces_loss(self, temp_dir: Path, cfg: str) -> None:
        args = ["fit-dynamic", "--config", cfg, "--scene", "dyn2cpt", "--oracle-field"]
        args += ["--keypoints-only", "--run", "dyn", "--steps", "30", "--quiet"]
        args += ["--set", "learning_rate=0.01"]
        assert main(args) == EXIT_OK
        rows = read_training_log(RunStateManager().log_path("dyn"))
        assert len(rows) == 30
        assert rows[-1]["total"] < rows[0]["total"]

    def test_keypoints_recover_motion(
        self, dyn_config: RunConfig, dyn_scene: SyntheticScene
    ) -> None:
        """Keypoint terms alone bring component and camera translations onto the truth."""
        config = replace(dyn_config, optim=replace(dyn_config.optim, learning_rate=0.01))
        clip = make_clip(dyn_scene, config.model, 32, rng_for(0, "e2e", "kp"), 48)
        data = ClipDataset(dyn_scene, intrinsics_for(config.model), [clip])
        result = fit_dynamic(
            data, config, 400, use_oracle_field=True, terms=ObjectiveTerms.keypoints_only()
        )
        camera, motion = result.model.tracks()
        motion_err = np.abs(motion.translations.value - clip.motion.translations.value).max()
        camera_err = np.abs(camera.translations.value - clip.camera.translations.value).max()
        assert motion_err < 2e-2
        assert camera_err < 1e-2


class TestVideoModelSanity:
    """The trained model uses its latent: posterior codes reconstruct, prior codes vary."""

    def test_posterior_beats_prior(self, dyn_config: RunConfig, dyn_scene: SyntheticScene) -> None:
        data = make_clip_dataset(dyn_scene, dyn_config.model, 16, seed=0, keypoints=8, samples=48)
        model = fit_vae(data, dyn_config, 3000).model
        wins = 0
        for n, clip in enumerate(data.clips):
            mu = encode_clip(clip.frames, model.encoder).mu.value
            posterior = reconstruction_nll(model, clip, mu, dyn_config)
            prior = reconstruction_nll(model, clip, sample_prior(model.z_dim, 1, n), dyn_config)
            wins += int(posterior < prior)
        assert wins >= 0.9 * len(data)

        x0 = data.clips[0].frames[0]
        _, _, first = model.condition(x0, sample_prior(model.z_dim, 1, 0))
        _, _, second = model.condition(x0, sample_prior(model.z_dim, 2, 0))
        assert np.abs(first.translations.value - second.translations.value).max() > 1e-3


class TestStaticBenchmark:
    """Held-out view quality of a full-size static fit."""

    def test_heldout_psnr(self) -> None:
        config = with_overrides(RunConfig(), {"num_views": 8, "threads": 8})
        data = make_static_dataset(load_scene("static2"), config.model, 8, threads=8)
        result = fit_static(data, config, 10_000)
        buf = result.model.render_view(data.heldout_pose, config, data.heldout_depth, 8)
        assert psnr(buf.rgb, data.heldout_frame) > 28.0
