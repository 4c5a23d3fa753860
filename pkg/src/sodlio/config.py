"""Pipeline configuration: nested dataclasses loaded from flat dotted-key YAML.

A config file is a single mapping such as::

    window.frame_length: 0.1
    overlap.voxel_size: 0.2

Keys not listed in the defaults are rejected, and every value is coerced to
the type of its default.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .eskf import EskfConfig
from .geometry import Pose, Rotation
from .imu import NoiseParams
from .window import WindowConfig

MODES = ("adaptive", "fixed")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OverlapConfig:
    voxel_size: float = 0.2
    d: int = 3
    betas: tuple | None = None
    metric: str = "chebyshev"
    crop_radius: float | None = None


@dataclass(frozen=True)
class RegMapConfig:
    voxel_size: float = 0.5
    max_points_per_voxel: int = 20
    point_spacing: float | None = None
    downsample_voxel: float = 0.25


@dataclass(frozen=True)
class InitConfig:
    position: tuple = (0.0, 0.0, 0.0)
    rotation: tuple = (1.0, 0.0, 0.0, 0.0)
    static_duration: float = 0.5
    moving: bool = False
    rot_var: float = 1e-4
    pos_var: float = 1e-4
    vel_var: float = 1e-4
    gyro_bias_var: float = 1e-6
    acc_bias_var: float = 1e-3
    grav_var: float = 1e-4


@dataclass(frozen=True)
class ExtrinsicConfig:
    translation: tuple = (0.0, 0.0, 0.0)
    rotation: tuple = (1.0, 0.0, 0.0, 0.0)

    def pose(self) -> Pose:
        return Pose(Rotation(np.asarray(self.rotation, dtype=float)), np.asarray(self.translation, dtype=float))


@dataclass(frozen=True)
class RunConfig:
    mode: str = "adaptive"
    max_degraded: int = 20
    record_timing: bool = False


@dataclass(frozen=True)
class PipelineConfig:
    window: WindowConfig = field(default_factory=WindowConfig)
    overlap: OverlapConfig = field(default_factory=OverlapConfig)
    regmap: RegMapConfig = field(default_factory=RegMapConfig)
    eskf: EskfConfig = field(default_factory=EskfConfig)
    imu: NoiseParams = field(default_factory=NoiseParams)
    init: InitConfig = field(default_factory=InitConfig)
    extrinsic: ExtrinsicConfig = field(default_factory=ExtrinsicConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def __post_init__(self):
        if self.run.mode not in MODES:
            raise ConfigError(f"run.mode must be one of {MODES}")
        if self.run.max_degraded < 1:
            raise ConfigError("run.max_degraded must be at least 1")
        if self.overlap.metric not in ("chebyshev", "manhattan"):
            raise ConfigError("overlap.metric must be chebyshev or manhattan")
        if self.overlap.voxel_size <= 0 or self.regmap.voxel_size <= 0:
            raise ConfigError("voxel sizes must be positive")
        if len(self.extrinsic.translation) != 3 or len(self.extrinsic.rotation) != 4:
            raise ConfigError("extrinsic needs a 3-vector translation and a wxyz quaternion")

    def to_flat(self) -> dict:
        out = {}
        for sec in dataclasses.fields(self):
            sub = getattr(self, sec.name)
            for f in dataclasses.fields(sub):
                v = getattr(sub, f.name)
                out[f"{sec.name}.{f.name}"] = list(v) if isinstance(v, tuple) else v
        return out

    def replace(self, **flat) -> "PipelineConfig":
        """Copy with dotted keys (``window__frame_length`` or ``"window.frame_length"``) overridden."""
        return from_flat({k.replace("__", "."): v for k, v in flat.items()}, base=self)


def _coerce(key: str, default, value):
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not float(value).is_integer():
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return int(value)
    if isinstance(default, float):
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected a number, got {value!r}") from None
    if isinstance(default, tuple) or default is None:
        if isinstance(value, (list, tuple)):
            return tuple(float(v) for v in value)
        if default is None and isinstance(value, (int, float)):
            return float(value)
        raise ConfigError(f"{key}: expected a list, got {value!r}")
    if isinstance(default, str):
        return str(value)
    return value


def from_flat(flat: dict, base: PipelineConfig | None = None) -> PipelineConfig:
    base = PipelineConfig() if base is None else base
    sections = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
    updates: dict[str, dict] = {name: {} for name in sections}
    for key, value in flat.items():
        sec, _, name = str(key).partition(".")
        if sec not in sections or not name:
            raise ConfigError(f"unknown config key {key!r}")
        known = {f.name for f in dataclasses.fields(sections[sec])}
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        updates[sec][name] = _coerce(key, getattr(sections[sec], name), value)
    try:
        built = {sec: dataclasses.replace(obj, **updates[sec]) for sec, obj in sections.items()}
        return PipelineConfig(**built)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def load_config(path=None) -> PipelineConfig:
    """Defaults overlaid with the dotted keys of ``path`` (if given)."""
    cfg = from_flat(_read_yaml(default_config_path()))
    if path is None:
        return cfg
    return from_flat(_read_yaml(path), base=cfg)


def _read_yaml(path) -> dict:
    text = Path(path).read_text()
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping of dotted keys")
    return data


def default_config_path() -> Path:
    return Path(str(resources.files("sodlio") / "data" / "default.yaml"))


def dump_config(cfg: PipelineConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_flat(), sort_keys=False))
