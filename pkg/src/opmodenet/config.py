"""Pipeline configuration: a single YAML file with dataclass mirrors and
validation. CLI flags override file values; flags win."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import yaml

from .errors import ConfigurationError, OpmodenetError
from .matching import DEFAULT_LAMBDA_M, DEFAULT_RADIUS_M, DEFAULT_SIGMA_M
from .mnn import TrainConfig
from .traffic import TrafficParams


@dataclass
class PathsConfig:
    network: str = ""
    traces_dir: str = ""
    elevation: str = ""
    attributes: str = ""
    embeddings: str = ""
    rate_table: str = ""  # empty -> bundled table
    cycle_library: str = ""  # empty -> bundled library
    output_dir: str = "out"


@dataclass
class TrajectoryParams:
    max_gap_s: float = 180.0
    sigma_m: float = DEFAULT_SIGMA_M
    lambda_m: float = DEFAULT_LAMBDA_M
    radius_m: float = DEFAULT_RADIUS_M
    max_speed_mph: float = 100.0
    min_link_distance_m: float = 50.0
    min_link_time_s: float = 120.0

    def __post_init__(self):
        for name in ("max_gap_s", "sigma_m", "lambda_m", "radius_m", "max_speed_mph"):
            if getattr(self, name) <= 0:
                raise ConfigurationError(f"trajectory.{name} must be > 0")


@dataclass
class PipelineConfig:
    seed: int
    paths: PathsConfig = field(default_factory=PathsConfig)
    traffic: TrafficParams = field(default_factory=TrafficParams)
    trajectory: TrajectoryParams = field(default_factory=TrajectoryParams)
    training: TrainConfig = field(default_factory=TrainConfig)
    window_start_hour: int | None = None  # optional local-hour trace filter
    window_end_hour: int | None = None

    def __post_init__(self):
        if not isinstance(self.seed, int):
            raise ConfigurationError(f"seed must be an integer, got {self.seed!r}")
        if (self.window_start_hour is None) != (self.window_end_hour is None):
            raise ConfigurationError("window_start_hour and window_end_hour go together")
        for h in (self.window_start_hour, self.window_end_hour):
            if h is not None and not 0 <= h <= 24:
                raise ConfigurationError(f"window hour out of range: {h}")

    @property
    def output_dir(self) -> Path:
        return Path(self.paths.output_dir)

    def canonical(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        return hashlib.sha256(
            json.dumps(self.canonical(), sort_keys=True).encode()
        ).hexdigest()


_SECTION_TYPES = {
    "paths": PathsConfig,
    "traffic": TrafficParams,
    "trajectory": TrajectoryParams,
    "training": TrainConfig,
}


def _build_section(cls, raw: dict, where: str):
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{where} must be a mapping, got {type(raw).__name__}")
    allowed = set(cls.__dataclass_fields__)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigurationError(f"unknown keys under {where}: {unknown}")
    try:
        return cls(**raw)
    except ConfigurationError:
        raise
    except (TypeError, ValueError, OpmodenetError) as exc:
        raise ConfigurationError(f"bad {where} section: {exc}") from exc


def load_config(path: str | Path, overrides: dict | None = None) -> PipelineConfig:
    """Parse a YAML config file, apply dotted-key overrides, validate."""
    path = Path(path)
    if not path.exists():
        raise ConfigurationError(f"config file not found: {path}")
    try:
        raw = yaml.safe_load(path.read_text()) or {}
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"malformed YAML in {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigurationError(f"top level of {path} must be a mapping")
    for dotted, value in (overrides or {}).items():
        parts = dotted.split(".")
        node = raw
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigurationError(f"cannot override through scalar at {dotted}")
        node[parts[-1]] = value

    if "seed" not in raw:
        raise ConfigurationError("config must set a seed")
    known = {"seed", "window_start_hour", "window_end_hour", *_SECTION_TYPES}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigurationError(f"unknown top-level config keys: {unknown}")
    kwargs = {
        "seed": raw["seed"],
        "window_start_hour": raw.get("window_start_hour"),
        "window_end_hour": raw.get("window_end_hour"),
    }
    for name, cls in _SECTION_TYPES.items():
        if name in raw:
            kwargs[name] = _build_section(cls, raw[name], name)
    return PipelineConfig(**kwargs)
