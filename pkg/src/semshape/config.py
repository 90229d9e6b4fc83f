"""Run configuration: one JSON document driving every pipeline command.

Sections map onto the library dataclasses (``train`` -> TrainConfig,
``solver`` -> SolverConfig); ``dataset`` and ``eval`` are defined here.
Unknown keys anywhere are rejected rather than ignored, absent keys take
defaults, and the resolved document is written back into run outputs so a
result directory always records exactly what produced it.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .posesolver import SolverConfig
from .shapemodel import TrainConfig
from .synthgen import Family


@dataclass
class DatasetConfig:
    """Synthetic category and scene generation parameters."""

    family: str = "bottle"
    instance_count: int = 25
    points_per_instance: int = 2048
    mode_ranges: dict | None = None
    symmetry: str | None = None
    holdout: int = 5
    scene_count: int = 100
    cull_fraction: float = 0.5
    noise_sigma: float = 0.005
    outlier_count: int = 5
    scale_range: tuple = (0.22, 0.4)
    translation_range: float = 0.5

    def __post_init__(self):
        Family(self.family.lower())  # raises on unknown family
        if self.instance_count < 2:
            raise ValueError("instance_count must be >= 2")
        if not 1 <= self.holdout < self.instance_count:
            raise ValueError("holdout must leave at least one training instance")
        if self.scene_count < 0:
            raise ValueError("scene_count must be >= 0")
        lo, hi = self.scale_range
        if not 0 < lo <= hi:
            raise ValueError(f"scale_range must satisfy 0 < lo <= hi, got ({lo}, {hi})")
        if self.translation_range < 0:
            raise ValueError("translation_range must be >= 0")
        self.scale_range = (float(lo), float(hi))
        if self.mode_ranges is not None:
            fixed = {}
            for name, pair in self.mode_ranges.items():
                if len(pair) != 2:
                    raise ValueError(f"mode {name!r} needs a [lo, hi] pair")
                fixed[str(name)] = (float(pair[0]), float(pair[1]))
            self.mode_ranges = fixed


@dataclass
class EvalConfig:
    """Report assembly options."""

    iou_method: str = "exact"
    voxel_resolution: int = 128
    svg: bool = True

    def __post_init__(self):
        if self.iou_method not in ("exact", "voxel"):
            raise ValueError(f"iou_method must be 'exact' or 'voxel', got {self.iou_method!r}")
        if self.voxel_resolution < 8:
            raise ValueError("voxel_resolution must be >= 8")


@dataclass
class RunConfig:
    dataset: DatasetConfig = dataclasses.field(default_factory=DatasetConfig)
    train: TrainConfig = dataclasses.field(default_factory=TrainConfig)
    solver: SolverConfig = dataclasses.field(default_factory=SolverConfig)
    eval: EvalConfig = dataclasses.field(default_factory=EvalConfig)
    output_dir: str | None = None
    seed: int = 0


_SECTIONS = {
    "dataset": DatasetConfig,
    "train": TrainConfig,
    "solver": SolverConfig,
    "eval": EvalConfig,
}


def _build_section(name: str, cls, doc: dict):
    if not isinstance(doc, dict):
        raise ConfigError(f"{name}: expected an object, got {type(doc).__name__}")
    allowed = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in doc.items():
        if key not in allowed:
            raise ConfigError(f"{name}.{key}: unknown key")
        if key == "curriculum_schedule" and value is not None:
            value = [tuple(pair) for pair in value]
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except (ValueError, TypeError) as exc:
        raise ConfigError(f"{name}: {exc}") from exc


def config_from_dict(doc: dict) -> RunConfig:
    """Validate a parsed JSON document into a RunConfig."""
    if not isinstance(doc, dict):
        raise ConfigError(f"config root must be an object, got {type(doc).__name__}")
    known = set(_SECTIONS) | {"output_dir", "seed"}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{key}: unknown key")
    sections = {
        name: _build_section(name, cls, doc.get(name, {}))
        for name, cls in _SECTIONS.items()
    }
    output_dir = doc.get("output_dir")
    if output_dir is not None and not isinstance(output_dir, str):
        raise ConfigError("output_dir: expected a string or null")
    seed = doc.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ConfigError("seed: expected an integer")
    return RunConfig(output_dir=output_dir, seed=seed, **sections)


def load_config(path) -> RunConfig:
    """Read and validate a config file; absent path means all defaults."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    return config_from_dict(doc)


def config_to_dict(cfg: RunConfig) -> dict:
    """Resolved config as plain JSON-serializable data."""
    doc = {}
    for name in _SECTIONS:
        section = dataclasses.asdict(getattr(cfg, name))
        for key, value in section.items():
            if isinstance(value, tuple):
                section[key] = list(value)
            elif isinstance(value, list):
                section[key] = [list(v) if isinstance(v, tuple) else v for v in value]
        doc[name] = section
    doc["output_dir"] = cfg.output_dir
    doc["seed"] = cfg.seed
    return doc


def config_hash(cfg: RunConfig) -> str:
    """Stable digest of the resolved config for provenance stamps."""
    canon = json.dumps(config_to_dict(cfg), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()
