"""Tests for the command-line interface."""

from __future__ import annotations

from pathlib import Path

import pytest

from latent4d.cli import EXIT_INVALID, EXIT_NUMERIC, EXIT_OK, main
from latent4d.config import RunConfig, dump_config, load_run_config


@pytest.fixture
def cfg(temp_dir: Path, small_config: RunConfig) -> str:
    """A small run configuration file."""
    path = temp_dir / "small.cfg"
    path.write_text(dump_config(small_config), encoding="utf-8")
    return str(path)


class TestConfiguration:
    """Tests for configuration resolution and argument errors."""

    def test_dump_config(self, cfg: str, capsys: pytest.CaptureFixture[str]) -> None:
        """Flags override the config file, which overrides defaults."""
        code = main(["status", "--config", cfg, "--set", "z_dim=3", "--seed", "9", "--dump-config"])
        assert code == EXIT_OK
        out = capsys.readouterr().out
        assert "z_dim = 3\n" in out
        assert "seed = 9\n" in out
        assert "image_width = 16\n" in out

    def test_dump_output_loads_back(
        self, cfg: str, temp_dir: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        main(["status", "--config", cfg, "--dump-config"])
        path = temp_dir / "dumped.cfg"
        path.write_text(capsys.readouterr().out, encoding="utf-8")
        assert load_run_config(path) == load_run_config(cfg)

    def test_user_defaults_file(self, temp_dir: Path, capsys: pytest.CaptureFixture[str]) -> None:
        """defaults.json under L4D_HOME sits between built-ins and --config."""
        home = temp_dir / "home"
        home.mkdir()
        (home / "defaults.json").write_text('{"tv_patch": 2}', encoding="utf-8")
        assert main(["status", "--dump-config"]) == EXIT_OK
        assert "tv_patch = 2\n" in capsys.readouterr().out

    @pytest.mark.parametrize("item", ["no_such_key=1", "z_dim", "z_dim=three"])
    def test_bad_set(self, temp_dir: Path, item: str, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["status", "--set", item, "--dump-config"]) == EXIT_INVALID
        assert "Error:" in capsys.readouterr().err

    def test_missing_config_file(self, temp_dir: Path) -> None:
        args = ["status", "--config", str(temp_dir / "none.cfg"), "--dump-config"]
        assert main(args) == EXIT_INVALID

    def test_usage_error_exit_code(self, temp_dir: Path) -> None:
        with pytest.raises(SystemExit) as exc:
            main(["fit-static", "--steps", "many"])
        assert exc.value.code == EXIT_INVALID

    def test_unknown_scene(self, temp_dir: Path, cfg: str) -> None:
        args = ["synth", "--config", cfg, "--scene", "nowhere", "--out", str(temp_dir / "o")]
        assert main(args) == EXIT_INVALID


class TestSynthAndRender:
    """Tests for synth and render --oracle."""

    def test_synth_static(self, temp_dir: Path, cfg: str) -> None:
        out = temp_dir / "static"
        assert main(["synth", "--config", cfg, "--scene", "static2", "--out", str(out)]) == 0
        assert sorted(p.name for p in out.glob("view*.ppm")) == [
            "view00.ppm",
            "view01.ppm",
            "view02.ppm",
        ]
        assert (out / "heldout.ppm").exists()
        assert (out / "depth00.l4dt").exists()

    def test_synth_clips(self, temp_dir: Path, cfg: str) -> None:
        out = temp_dir / "clips"
        assert main(["synth", "--config", cfg, "--scene", "dyn2cpt", "--out", str(out)]) == 0
        clip_dirs = sorted(d.name for d in out.iterdir())
        assert clip_dirs == ["clip000", "clip001"]
        clip = out / "clip000"
        assert len(list(clip.glob("frame*.ppm"))) == 3
        for name in ("flow02.l4dt", "seg00.l4dt", "camera.l4dt", "motion.l4dt", "keypoints.csv"):
            assert (clip / name).exists()

    def test_render_oracle_frame(
        self, temp_dir: Path, cfg: str, capsys: pytest.CaptureFixture[str]
    ) -> None:
        out = temp_dir / "oracle"
        args = ["render", "--oracle", "--config", cfg, "--scene", "dyn2cpt"]
        assert main([*args, "--frame", "1", "--out", str(out)]) == EXIT_OK
        assert (out / "frame01.ppm").exists()
        assert (out / "flow01.l4dt").exists()
        assert "Rendered 1 oracle frame(s)" in capsys.readouterr().out

    def test_render_needs_a_source(self, temp_dir: Path, cfg: str) -> None:
        assert main(["render", "--config", cfg, "--out", str(temp_dir / "o")]) == EXIT_INVALID


class TestFitting:
    """Tests for the fit commands, run state and resume."""

    def test_fit_static_then_status_and_render(
        self, temp_dir: Path, cfg: str, capsys: pytest.CaptureFixture[str]
    ) -> None:
        args = ["fit-static", "--config", cfg, "--run", "s", "--quiet"]
        assert main([*args, "--steps", "2"]) == EXIT_OK
        out = capsys.readouterr().out
        assert "Finished 2 steps" in out
        assert "Held-out view PSNR" in out
        ckpt = temp_dir / "home" / "runs" / "s" / "step00000002.l4dc"
        assert ckpt.exists()
        log = (temp_dir / "home" / "runs" / "s" / "train.csv").read_text().splitlines()
        assert len(log) == 3

        assert main(["status", "--run", "s"]) == EXIT_OK
        status = capsys.readouterr().out
        assert "Command: fit-static" in status
        assert "Steps done: 2" in status

        render_out = temp_dir / "render"
        render = ["render", "--checkpoint", str(ckpt), "--out", str(render_out)]
        assert main(render) == EXIT_OK
        assert (render_out / "render.ppm").exists()
        assert "SSIM" in capsys.readouterr().out

    def test_resume_continues_to_total(self, temp_dir: Path, cfg: str) -> None:
        args = ["fit-static", "--config", cfg, "--run", "r", "--quiet"]
        assert main([*args, "--steps", "2"]) == EXIT_OK
        assert main([*args, "--steps", "3", "--resume"]) == EXIT_OK
        log = (temp_dir / "home" / "runs" / "r" / "train.csv").read_text().splitlines()
        assert len(log) == 4
        assert main([*args, "--steps", "1", "--resume"]) == EXIT_INVALID

    def test_fit_static_rejects_dynamic_scene(self, temp_dir: Path, cfg: str) -> None:
        args = ["fit-static", "--config", cfg, "--scene", "dyn2cpt", "--steps", "1", "-q"]
        assert main(args) == EXIT_INVALID

    def test_fit_dynamic_oracle_field(
        self, temp_dir: Path, cfg: str, capsys: pytest.CaptureFixture[str]
    ) -> None:
        args = ["fit-dynamic", "--config", cfg, "--scene", "dyn2cpt", "--oracle-field"]
        assert main([*args, "--keypoints-only", "--steps", "1", "--run", "d", "-q"]) == 0
        assert "Max camera translation error" in capsys.readouterr().out
        assert (temp_dir / "home" / "runs" / "d" / "step00000001.l4dc").exists()

    def test_fit_dynamic_bad_freeze(self, temp_dir: Path, cfg: str) -> None:
        args = ["fit-dynamic", "--config", cfg, "--scene", "dyn2cpt", "--freeze", "lens"]
        assert main([*args, "--steps", "1", "-q"]) == EXIT_INVALID

    def test_status_without_runs(self, temp_dir: Path, capsys: pytest.CaptureFixture[str]) -> None:
        assert main(["status"]) == EXIT_OK
        assert "No runs recorded yet." in capsys.readouterr().out


class TestGradcheck:
    """Tests for the gradcheck command."""

    def test_passes_at_default_tolerance(
        self, temp_dir: Path, cfg: str, capsys: pytest.CaptureFixture[str]
    ) -> None:
        args = ["gradcheck", "--config", cfg, "--scene", "dyn2cpt", "--picks", "8"]
        assert main(args) == EXIT_OK
        assert "Checked 8 entries" in capsys.readouterr().out

    def test_failure_exit_code(self, temp_dir: Path, cfg: str) -> None:
        args = ["gradcheck", "--config", cfg, "--scene", "dyn2cpt", "--picks", "2"]
        assert main([*args, "--tol", "-1"]) == EXIT_NUMERIC


class TestEval:
    """Tests for eval argument handling."""

    def test_missing_ground_truth(self, temp_dir: Path) -> None:
        args = ["eval", "--pred", str(temp_dir), "--gt", str(temp_dir / "gt")]
        assert main(args) == EXIT_INVALID
