"""On-disk formats: PPM images, L4DT tensors, L4DC checkpoints and CSV tables.

All binary integers and floats are little-endian. Readers validate the whole payload before
returning, so a failed read never yields partial data.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import struct
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from numpy.typing import ArrayLike

from .autodiff import Array
from .config import RunConfig, config_defaults, with_overrides
from .errors import CheckpointIoError, ConfigError, FormatError, FormatVersionMismatch
from .losses import LOG_COLUMNS, KeypointTrack

logger = logging.getLogger(__name__)

TENSOR_MAGIC = b"L4DT"
TENSOR_VERSION = 1
CHECKPOINT_MAGIC = b"L4DC"
CHECKPOINT_VERSION = 1
KEYPOINT_COLUMNS = ("track_id", "frame", "x", "y", "depth0", "component")


# ---------------------------------------------------------------------------------------------
# PPM


def encode_ppm(rgb: ArrayLike) -> bytes:
    """Binary P6 bytes for an (H, W, 3) image with values in [0, 1]."""
    img = np.asarray(rgb, dtype=np.float64)
    if img.ndim != 3 or img.shape[2] != 3:
        raise FormatError(f"PPM needs an (H, W, 3) image, got {img.shape}")
    data = np.round(np.clip(np.nan_to_num(img), 0.0, 1.0) * 255.0).astype(np.uint8)
    header = f"P6\n{img.shape[1]} {img.shape[0]}\n255\n".encode("ascii")
    return header + data.tobytes()


def _ppm_tokens(data: bytes, count: int) -> tuple[list[int], int]:
    """Read ``count`` whitespace-separated header integers, skipping ``#`` comments."""
    tokens: list[int] = []
    pos = 2
    while len(tokens) < count:
        if pos >= len(data):
            raise FormatError("truncated PPM header")
        ch = data[pos : pos + 1]
        if ch.isspace():
            pos += 1
        elif ch == b"#":
            end = data.find(b"\n", pos)
            pos = len(data) if end < 0 else end + 1
        else:
            start = pos
            while pos < len(data) and data[pos : pos + 1].isdigit():
                pos += 1
            if start == pos:
                raise FormatError(f"bad PPM header byte {ch!r}")
            tokens.append(int(data[start:pos]))
    # Exactly one whitespace byte separates the header from the raster.
    return tokens, pos + 1


def decode_ppm(data: bytes) -> Array:
    if data[:2] != b"P6":
        raise FormatError("not a binary PPM (P6)")
    (width, height, maxval), start = _ppm_tokens(data, 3)
    if maxval != 255:
        raise FormatError(f"unsupported PPM maxval {maxval}")
    expected = width * height * 3
    raster = data[start:]
    if len(raster) != expected:
        raise FormatError(f"PPM raster has {len(raster)} bytes, expected {expected}")
    pixels = np.frombuffer(raster, dtype=np.uint8).reshape(height, width, 3)
    return pixels.astype(np.float64) / 255.0


def write_ppm(path: str | Path, rgb: ArrayLike) -> None:
    Path(path).write_bytes(encode_ppm(rgb))


def read_ppm(path: str | Path) -> Array:
    return decode_ppm(Path(path).read_bytes())


# ---------------------------------------------------------------------------------------------
# L4DT tensors


def encode_tensor(array: ArrayLike) -> bytes:
    arr = np.ascontiguousarray(np.asarray(array, dtype="<f4"))
    header = TENSOR_MAGIC + struct.pack("<II", TENSOR_VERSION, arr.ndim)
    dims = struct.pack(f"<{arr.ndim}Q", *arr.shape)
    return header + dims + arr.tobytes()


def decode_tensor(data: bytes) -> Array:
    """Decode an L4DT payload; values come back as float64 copies of the stored float32."""
    if data[:4] != TENSOR_MAGIC:
        raise FormatError("not an L4DT tensor")
    if len(data) < 12:
        raise FormatError("truncated L4DT header")
    version, rank = struct.unpack_from("<II", data, 4)
    if version != TENSOR_VERSION:
        raise FormatError(f"unsupported L4DT version {version}")
    if len(data) < 12 + 8 * rank:
        raise FormatError("truncated L4DT dims")
    dims = struct.unpack_from(f"<{rank}Q", data, 12)
    start = 12 + 8 * rank
    count = math.prod(dims)
    if len(data) - start != 4 * count:
        raise FormatError(f"L4DT payload has {len(data) - start} bytes, expected {4 * count}")
    values = np.frombuffer(data, dtype="<f4", count=count, offset=start)
    return values.reshape(dims).astype(np.float64)


def write_tensor(path: str | Path, array: ArrayLike) -> None:
    Path(path).write_bytes(encode_tensor(array))


def read_tensor(path: str | Path) -> Array:
    return decode_tensor(Path(path).read_bytes())


# ---------------------------------------------------------------------------------------------
# L4DC checkpoints


@dataclass
class OptimizerSnapshot:
    """Adam state as stored in a checkpoint."""

    step: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: dict[str, Array] = field(default_factory=dict)
    v: dict[str, Array] = field(default_factory=dict)


@dataclass
class Checkpoint:
    """Everything needed to resume a fit: configuration, named arrays and optimizer state.

    ``meta`` holds small JSON-serializable facts about the run (fit kind, scene, component
    count) and travels in the config blob next to the configuration itself.
    """

    config: RunConfig
    params: dict[str, Array]
    optimizer: OptimizerSnapshot = field(default_factory=OptimizerSnapshot)
    meta: dict[str, Any] = field(default_factory=dict)


def _table_bytes(table: Mapping[str, Array]) -> bytes:
    out = [struct.pack("<I", len(table))]
    for name, value in table.items():
        raw = name.encode("utf-8")
        arr = np.ascontiguousarray(np.asarray(value, dtype="<f8"))
        out.append(struct.pack("<H", len(raw)) + raw)
        out.append(struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}Q", *arr.shape))
        out.append(arr.tobytes())
    return b"".join(out)


def encode_checkpoint(ckpt: Checkpoint) -> bytes:
    flat = {
        k: list(v) if isinstance(v, tuple) else v for k, v in config_defaults(ckpt.config).items()
    }
    blob = json.dumps({"config": flat, "meta": ckpt.meta}, sort_keys=True).encode("utf-8")
    opt = ckpt.optimizer
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<I", len(blob)),
        blob,
        _table_bytes(ckpt.params),
        struct.pack("<Q4d", opt.step, opt.lr, opt.beta1, opt.beta2, opt.eps),
        _table_bytes(opt.m),
        _table_bytes(opt.v),
    ]
    return b"".join(parts)


class _Cursor:
    def __init__(self, data: bytes) -> None:
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CheckpointIoError(f"checkpoint truncated at byte {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str) -> tuple[Any, ...]:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def table(self) -> dict[str, Array]:
        (count,) = self.unpack("<I")
        out: dict[str, Array] = {}
        for _ in range(count):
            (name_len,) = self.unpack("<H")
            try:
                name = self.take(name_len).decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CheckpointIoError(f"bad parameter name: {exc}") from exc
            (rank,) = self.unpack("<I")
            dims = self.unpack(f"<{rank}Q")
            raw = self.take(8 * math.prod(dims))
            out[name] = np.frombuffer(raw, dtype="<f8").reshape(dims).astype(np.float64)
        return out


def decode_checkpoint(data: bytes) -> Checkpoint:
    cur = _Cursor(data)
    if cur.take(4) != CHECKPOINT_MAGIC:
        raise FormatVersionMismatch("not an L4DC checkpoint")
    (version,) = cur.unpack("<I")
    if version != CHECKPOINT_VERSION:
        raise FormatVersionMismatch(f"checkpoint version {version}, expected {CHECKPOINT_VERSION}")
    (blob_len,) = cur.unpack("<I")
    try:
        blob = json.loads(cur.take(blob_len).decode("utf-8"))
        config = with_overrides(RunConfig(), blob["config"])
        meta = dict(blob.get("meta", {}))
    except (UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ConfigError) as exc:
        raise CheckpointIoError(f"bad checkpoint config blob: {exc}") from exc
    params = cur.table()
    step, lr, beta1, beta2, eps = cur.unpack("<Q4d")
    m = cur.table()
    v = cur.table()
    if cur.pos != len(data):
        raise CheckpointIoError(f"{len(data) - cur.pos} trailing bytes after checkpoint")
    return Checkpoint(config, params, OptimizerSnapshot(step, lr, beta1, beta2, eps, m, v), meta)


def save_checkpoint_file(path: str | Path, ckpt: Checkpoint) -> None:
    target = Path(path)
    tmp = target.with_name(target.name + ".tmp")
    try:
        target.parent.mkdir(parents=True, exist_ok=True)
        tmp.write_bytes(encode_checkpoint(ckpt))
        tmp.replace(target)
    except OSError as exc:
        raise CheckpointIoError(f"cannot write checkpoint {path}: {exc}") from exc
    logger.debug("wrote checkpoint %s (%d arrays)", path, len(ckpt.params))


def load_checkpoint_file(path: str | Path) -> Checkpoint:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointIoError(f"cannot read checkpoint {path}: {exc}") from exc
    return decode_checkpoint(data)


# ---------------------------------------------------------------------------------------------
# CSV


def write_csv(
    path: str | Path, columns: Sequence[str], rows: Iterable[Mapping[str, Any]]
) -> None:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=list(columns), extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: _csv_value(row[k]) for k in columns})


def _csv_value(value: Any) -> Any:
    if isinstance(value, float):
        return repr(value)
    return value


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


class TrainingLog:
    """Append-only CSV of per-step loss breakdowns."""

    def __init__(self, path: str | Path, append: bool = False) -> None:
        self.path = Path(path)
        if not append or not self.path.exists():
            write_csv(self.path, LOG_COLUMNS, [])

    def append(self, row: Mapping[str, float]) -> None:
        with open(self.path, "a", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=list(LOG_COLUMNS), extrasaction="ignore")
            writer.writerow({k: _csv_value(row[k]) for k in LOG_COLUMNS})


def read_training_log(path: str | Path) -> list[dict[str, float]]:
    try:
        return [{k: float(v) for k, v in row.items()} for row in read_csv(path)]
    except (ValueError, TypeError) as exc:
        raise FormatError(f"bad training log {path}: {exc}") from exc


def write_keypoints(path: str | Path, tracks: Sequence[KeypointTrack]) -> None:
    rows = []
    for track in tracks:
        for t in range(track.num_frames):
            if track.present(t):
                x, y = track.positions[t]
                rows.append(
                    {
                        "track_id": track.track_id,
                        "frame": t,
                        "x": float(x),
                        "y": float(y),
                        "depth0": float(track.depth0),
                        "component": track.component,
                    }
                )
    write_csv(path, KEYPOINT_COLUMNS, rows)


def read_keypoints(path: str | Path, num_frames: int | None = None) -> list[KeypointTrack]:
    """Tracks from a keypoint CSV; frames without a row are absent (NaN)."""
    try:
        rows = [
            (
                int(r["track_id"]),
                int(r["frame"]),
                float(r["x"]),
                float(r["y"]),
                float(r["depth0"]),
                int(r["component"]),
            )
            for r in read_csv(path)
        ]
    except (KeyError, ValueError, TypeError) as exc:
        raise FormatError(f"bad keypoint file {path}: {exc}") from exc
    if not rows:
        return []
    frames = num_frames or max(r[1] for r in rows) + 1
    by_id: dict[int, tuple[Array, float, int]] = {}
    for track_id, t, x, y, depth0, comp in rows:
        if not 0 <= t < frames:
            raise FormatError(f"keypoint frame {t} outside 0..{frames - 1}")
        if track_id not in by_id:
            by_id[track_id] = (np.full((frames, 2), np.nan), depth0, comp)
        by_id[track_id][0][t] = (x, y)
    return [KeypointTrack(k, pos, d0, comp) for k, (pos, d0, comp) in by_id.items()]
