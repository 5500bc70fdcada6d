"""Configuration management for latent4d.

Run configuration lives in plain-text ``key = value`` files. Every hyperparameter of the
model has a same-named key; unknown keys are rejected so typos never pass silently.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Literal

from .errors import ConfigError

THREADS_ENV = "L4D_THREADS"
HOME_ENV = "L4D_HOME"


def get_state_base_dir() -> Path:
    """Get the base directory for run state and user defaults."""
    base_dir = os.environ.get(HOME_ENV, os.path.expanduser("~/.latent4d"))
    return Path(base_dir)


def get_config_path() -> Path:
    """Get the path to the user-level defaults file."""
    return get_state_base_dir() / "defaults.json"


def load_config() -> dict[str, Any]:
    """Load user-level default overrides from file."""
    config_path = get_config_path()
    if config_path.exists():
        with open(config_path, encoding="utf-8") as f:
            data: dict[str, Any] = json.load(f)
            return data
    return {}


def save_config(config: dict[str, Any]) -> None:
    """Save user-level default overrides to file."""
    config_path = get_config_path()
    config_path.parent.mkdir(parents=True, exist_ok=True)
    with open(config_path, "w", encoding="utf-8") as f:
        json.dump(config, f, indent=2)


def resolve_threads(flag: int | None) -> int:
    """--threads wins, then $L4D_THREADS, then a single thread."""
    if flag is not None:
        return max(1, flag)
    env = os.environ.get(THREADS_ENV)
    if env:
        try:
            return max(1, int(env))
        except ValueError as exc:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {env!r}") from exc
    return 1


# ---------------------------------------------------------------------------------------------
# Run configuration


@dataclass(frozen=True)
class ModelConfig:
    z_dim: int = 16
    component_count: int = 2
    image_width: int = 64
    image_height: int = 64
    fov_degrees: float = 60.0
    num_future_frames: int = 4
    hidden_width: int = 64
    hidden_layers: int = 3
    num_bands: int = 6
    leaky_slope: float = 0.2
    layer_norm: bool = False
    feature_channels: int = 8
    feature_grid: int = 8
    embedding_dim: int = 32
    film_blocks: int = 1
    cond_resolution: int = 32
    cond_channels: int = 16
    decoder_width: int = 64
    encoder_resolution: int = 32
    encoder_channels: int = 16
    camera_model: Literal["general", "vehicle"] = "general"
    motion_model: Literal["planar", "se3"] = "planar"
    static_background: bool = True
    bounds_center: tuple[float, float, float] = (0.0, 0.0, -4.0)
    bounds_extent: float = 3.0


@dataclass(frozen=True)
class LossConfig:
    pixel_std: float = 0.085
    kl_weight: float = 1.0
    kl_anneal_steps: int = 50000
    l1_velocity_strength: float = 0.1
    tv_strength: float = 10.0
    tv_zeta: float = 10.0
    tv_patch: int = 8
    depth_consistency_strength: float = 100.0
    keypoint_flow_strength: float = 2.0
    keypoint_depth_strength: float = 500.0
    x0_weight: float = 1.0


@dataclass(frozen=True)
class OptimConfig:
    batch_size: int = 8
    learning_rate: float = 1e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    grad_clip: float = 10.0
    max_steps: int = 10000
    rays_per_frame: int = 256
    log_every: int = 50
    checkpoint_every: int = 1000


@dataclass(frozen=True)
class RenderConfig:
    near: float = 0.1
    far: float = 50.0
    samples_per_ray: int = 48
    depth_margin: float = 0.1
    opacity_mode: Literal["mixture", "product"] = "mixture"
    jitter: bool = True
    chunk_rays: int = 1024


@dataclass(frozen=True)
class DataConfig:
    scene: str = "static2"
    num_views: int = 8
    num_clips: int = 16
    oracle_samples: int = 512
    keypoints_per_clip: int = 64


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    threads: int = 1
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    render: RenderConfig = field(default_factory=RenderConfig)
    data: DataConfig = field(default_factory=DataConfig)


SECTIONS = ("model", "loss", "optim", "render", "data")
_TOP_LEVEL = ("seed", "threads")


def _key_index() -> dict[str, str]:
    """Map each flat key to the section that owns it."""
    index = {key: "" for key in _TOP_LEVEL}
    defaults = RunConfig()
    for section in SECTIONS:
        for f in fields(getattr(defaults, section)):
            if f.name in index:
                raise RuntimeError(f"duplicate config key {f.name}")
            index[f.name] = section
    return index


KEYS = _key_index()

CHOICES = {
    "camera_model": ("general", "vehicle"),
    "motion_model": ("planar", "se3"),
    "opacity_mode": ("mixture", "product"),
}


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(_format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _coerce(key: str, text: str, default: Any) -> Any:
    text = text.strip()
    try:
        if isinstance(default, bool):
            lowered = text.lower()
            if lowered not in ("true", "false"):
                raise ValueError(text)
            return lowered == "true"
        if isinstance(default, int):
            return int(text)
        if isinstance(default, float):
            return float(text)
        if isinstance(default, tuple):
            items = tuple(float(v) for v in text.split(","))
            if len(items) != len(default):
                raise ValueError(f"expected {len(default)} values")
            return items
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {text!r} ({exc})") from exc
    return text


def config_defaults(config: RunConfig) -> dict[str, Any]:
    flat: dict[str, Any] = {key: getattr(config, key) for key in _TOP_LEVEL}
    for section in SECTIONS:
        sub = getattr(config, section)
        flat.update({f.name: getattr(sub, f.name) for f in fields(sub)})
    return flat


def with_overrides(config: RunConfig, overrides: dict[str, Any]) -> RunConfig:
    """Return ``config`` with flat ``key -> value`` overrides applied; values may be text."""
    current = config_defaults(config)
    top: dict[str, Any] = {}
    per_section: dict[str, dict[str, Any]] = {s: {} for s in SECTIONS}
    for key, value in overrides.items():
        if key not in KEYS:
            raise ConfigError(f"unknown config key: {key}")
        if isinstance(value, str):
            value = _coerce(key, value, current[key])
        elif isinstance(value, list):
            value = tuple(value)
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(f"{key} must be one of {', '.join(CHOICES[key])}, got {value!r}")
        section = KEYS[key]
        if section:
            per_section[section][key] = value
        else:
            top[key] = value
    sections = {s: replace(getattr(config, s), **v) for s, v in per_section.items() if v}
    return replace(config, **top, **sections)


def parse_key_values(text: str) -> list[tuple[str, dict[str, str]]]:
    """Parse the ``key = value`` grammar into (section, entries) blocks.

    Lines before any ``[section]`` header belong to the unnamed section ``""``. A header may
    carry ``key=value`` pairs on the same line; following lines extend that section until the
    next header. ``#`` starts a comment.
    """
    blocks: list[tuple[str, dict[str, str]]] = [("", {})]
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("["):
            end = line.find("]")
            if end < 0:
                raise ConfigError(f"line {lineno}: unterminated section header")
            blocks.append((line[1:end].strip(), {}))
            rest = line[end + 1 :].strip()
            if rest:
                blocks[-1][1].update(_inline_pairs(rest, lineno))
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = line.split("=", 1)
        blocks[-1][1][key.strip()] = value.strip()
    return blocks


def _inline_pairs(text: str, lineno: int) -> dict[str, str]:
    """Split ``a=1 b=2, 3 c = 4`` into pairs; bare tokens extend the previous value."""
    pairs: dict[str, str] = {}
    key: str | None = None
    for token in text.replace(" =", "=").replace("= ", "=").split():
        if "=" in token:
            key, value = token.split("=", 1)
            pairs[key] = value
        elif key is None:
            raise ConfigError(f"line {lineno}: expected key=value, got {token!r}")
        else:
            pairs[key] += token
    return pairs


def parse_config(text: str, base: RunConfig | None = None) -> RunConfig:
    blocks = parse_key_values(text)
    if any(name for name, _ in blocks):
        raise ConfigError("run configuration files take no [section] headers")
    return with_overrides(base or RunConfig(), blocks[0][1])


def load_run_config(path: str | Path, base: RunConfig | None = None) -> RunConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, base)


def dump_config(config: RunConfig) -> str:
    lines = ["# latent4d run configuration"]
    flat = config_defaults(config)
    for key in _TOP_LEVEL:
        lines.append(f"{key} = {_format_value(flat[key])}")
    for section in SECTIONS:
        lines.append("")
        lines.append(f"# {section}")
        for f in fields(getattr(config, section)):
            lines.append(f"{f.name} = {_format_value(flat[f.name])}")
    return "\n".join(lines) + "\n"
