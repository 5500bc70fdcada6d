"""Tests for image, tensor, checkpoint and CSV files."""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np
import pytest

from latent4d.config import RunConfig, with_overrides
from latent4d.errors import CheckpointIoError, FormatError, FormatVersionMismatch
from latent4d.formats import (
    Checkpoint,
    OptimizerSnapshot,
    TrainingLog,
    decode_checkpoint,
    decode_ppm,
    decode_tensor,
    encode_checkpoint,
    encode_ppm,
    encode_tensor,
    load_checkpoint_file,
    read_csv,
    read_keypoints,
    read_tensor,
    read_training_log,
    save_checkpoint_file,
    write_csv,
    write_keypoints,
    write_tensor,
)
from latent4d.losses import LOG_COLUMNS, KeypointTrack


def _checkpoint() -> Checkpoint:
    rng = np.random.default_rng(0)
    params = {"field.in.w": rng.normal(size=(3, 4)), "cond.xi": rng.normal(size=5)}
    opt = OptimizerSnapshot(
        step=12,
        lr=3e-4,
        m={k: np.full_like(v, 0.1) for k, v in params.items()},
        v={k: np.full_like(v, 0.2) for k, v in params.items()},
    )
    config = with_overrides(RunConfig(), {"z_dim": 5, "bounds_center": (0.0, 1.0, -3.0)})
    return Checkpoint(config, params, opt, {"kind": "static", "scene": "static2"})


class TestPpm:
    """Tests for PPM images."""

    def test_header_and_quantization(self) -> None:
        img = np.zeros((2, 3, 3))
        img[0, 0] = [1.0, 0.5, 2.0]
        data = encode_ppm(img)
        assert data.startswith(b"P6\n3 2\n255\n")
        back = decode_ppm(data)
        assert back.shape == (2, 3, 3)
        np.testing.assert_allclose(back[0, 0], [1.0, 128 / 255, 1.0])

    def test_decode_with_comment(self) -> None:
        data = b"P6\n# made by hand\n1 1\n255\n" + bytes([255, 0, 51])
        np.testing.assert_allclose(decode_ppm(data)[0, 0], [1.0, 0.0, 0.2])

    @pytest.mark.parametrize(
        "data",
        [b"P3\n1 1\n255\n\x00\x00\x00", b"P6\n1 1\n65535\n\x00\x00", b"P6\n2 1\n255\n\x00\x00"],
    )
    def test_decode_rejects(self, data: bytes) -> None:
        with pytest.raises(FormatError):
            decode_ppm(data)

    def test_encode_rejects_gray(self) -> None:
        with pytest.raises(FormatError):
            encode_ppm(np.zeros((4, 4)))


class TestTensor:
    """Tests for L4DT tensors."""

    def test_layout(self) -> None:
        data = encode_tensor(np.arange(6.0).reshape(2, 3))
        assert data[:4] == b"L4DT"
        assert struct.unpack_from("<II2Q", data, 4) == (1, 2, 2, 3)
        assert len(data) == 12 + 16 + 24

    def test_values_round_through_float32(self) -> None:
        arr = np.array([[0.1, -2.5], [1e-3, 7.0]])
        np.testing.assert_array_equal(decode_tensor(encode_tensor(arr)), arr.astype(np.float32))

    def test_file_round_trip(self, temp_dir: Path) -> None:
        path = temp_dir / "depth.l4dt"
        write_tensor(path, np.full((3, 4), 2.5))
        np.testing.assert_array_equal(read_tensor(path), np.full((3, 4), 2.5))

    def test_scalar_tensor(self) -> None:
        assert decode_tensor(encode_tensor(3.0)).shape == ()

    def test_truncated_payload(self) -> None:
        data = encode_tensor(np.ones((2, 2)))
        with pytest.raises(FormatError):
            decode_tensor(data[:-1])
        with pytest.raises(FormatError):
            decode_tensor(data + b"\x00")
        with pytest.raises(FormatError):
            decode_tensor(b"NOPE" + data[4:])


class TestCheckpoint:
    """Tests for L4DC checkpoints."""

    def test_round_trip_is_exact(self) -> None:
        ckpt = _checkpoint()
        back = decode_checkpoint(encode_checkpoint(ckpt))
        assert back.config == ckpt.config
        assert back.meta == ckpt.meta
        assert set(back.params) == set(ckpt.params)
        for name, value in ckpt.params.items():
            np.testing.assert_array_equal(back.params[name], value)
            np.testing.assert_array_equal(back.optimizer.m[name], ckpt.optimizer.m[name])
        assert back.optimizer.step == 12
        assert back.optimizer.lr == 3e-4

    def test_bad_magic_and_version(self) -> None:
        data = encode_checkpoint(_checkpoint())
        with pytest.raises(FormatVersionMismatch):
            decode_checkpoint(b"XXXX" + data[4:])
        with pytest.raises(FormatVersionMismatch):
            decode_checkpoint(data[:4] + struct.pack("<I", 2) + data[8:])

    @pytest.mark.parametrize("cut", [6, 20, -1, -100])
    def test_truncation_is_detected(self, cut: int) -> None:
        data = encode_checkpoint(_checkpoint())
        with pytest.raises(CheckpointIoError):
            decode_checkpoint(data[:cut])

    def test_trailing_bytes_are_rejected(self) -> None:
        with pytest.raises(CheckpointIoError):
            decode_checkpoint(encode_checkpoint(_checkpoint()) + b"\x00")

    def test_unknown_config_key_is_rejected(self) -> None:
        blob = b'{"config": {"no_such_key": 1}, "meta": {}}'
        data = b"L4DC" + struct.pack("<II", 1, len(blob)) + blob
        with pytest.raises(CheckpointIoError):
            decode_checkpoint(data)

    def test_file_round_trip(self, temp_dir: Path) -> None:
        path = temp_dir / "runs" / "a" / "ckpt.l4dc"
        save_checkpoint_file(path, _checkpoint())
        assert not path.with_name("ckpt.l4dc.tmp").exists()
        assert load_checkpoint_file(path).meta["kind"] == "static"

    def test_missing_file(self, temp_dir: Path) -> None:
        with pytest.raises(CheckpointIoError):
            load_checkpoint_file(temp_dir / "nothing.l4dc")


class TestCsv:
    """Tests for CSV tables, training logs and keypoint files."""

    def test_write_and_read(self, temp_dir: Path) -> None:
        path = temp_dir / "t.csv"
        write_csv(path, ["a", "b"], [{"a": 1, "b": 0.1, "c": "ignored"}])
        assert read_csv(path) == [{"a": "1", "b": "0.1"}]

    def test_training_log_appends(self, temp_dir: Path) -> None:
        path = temp_dir / "train.csv"
        log = TrainingLog(path)
        row = dict.fromkeys(LOG_COLUMNS, 0.5)
        log.append({**row, "step": 0})
        TrainingLog(path, append=True).append({**row, "step": 1})
        rows = read_training_log(path)
        assert [r["step"] for r in rows] == [0.0, 1.0]
        assert rows[1]["total"] == 0.5
        TrainingLog(path)
        assert read_training_log(path) == []

    def test_training_log_rejects_text(self, temp_dir: Path) -> None:
        path = temp_dir / "bad.csv"
        write_csv(path, ["step"], [{"step": "soon"}])
        with pytest.raises(FormatError):
            read_training_log(path)

    def test_keypoints_keep_gaps(self, temp_dir: Path) -> None:
        pos = np.array([[1.5, 2.5], [np.nan, np.nan], [3.25, 4.0]])
        tracks = [KeypointTrack(7, pos, 4.5, 1), KeypointTrack(9, pos[:1].repeat(3, 0), 2.0, 0)]
        path = temp_dir / "kp.csv"
        write_keypoints(path, tracks)
        back = read_keypoints(path)
        assert [t.track_id for t in back] == [7, 9]
        np.testing.assert_array_equal(back[0].positions, pos)
        assert back[0].depth0 == 4.5
        assert back[0].component == 1

    def test_keypoint_frame_outside_clip(self, temp_dir: Path) -> None:
        path = temp_dir / "kp.csv"
        write_keypoints(path, [KeypointTrack(0, np.ones((3, 2)))])
        with pytest.raises(FormatError):
            read_keypoints(path, num_frames=2)
        assert read_keypoints(temp_dir / "kp.csv", num_frames=3)[0].num_frames == 3
