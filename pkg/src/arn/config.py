"""Run configuration: one declarative file plus command-line overrides."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import yaml

from .errors import ARNError, ConfigError
from .vision import MAX_ANGLE, NetworkConfig, TilingSpec

DEFAULT_ANGLES = (-10.0, -5.0, 5.0, 10.0)


@dataclass
class RunConfig:
    images: Optional[str] = None
    labels: Optional[str] = None
    n_per_class: int = 50
    test_per_class: int = 15
    seed: int = 0
    output_dir: str = "runs/default"

    rho: float = 2.42
    threshold: float = 0.9
    l1_threshold: float = 0.9
    grid_rows: int = 4
    grid_cols: int = 4
    k_cap: int = 16384
    pixel_floor: Optional[float] = None
    angles: list[float] = field(default_factory=lambda: list(DEFAULT_ANGLES))
    l2_rho_scale: float = 10.0
    jitter: int = 1
    dilation_factor: float = 0.9
    dilation_steps: int = 7
    blank_level: Optional[float] = 0.0
    tuning: str = "frozen"
    epochs: int = 1
    workers: int = 1

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if not 0.0 < self.threshold < 1.0:
            raise ConfigError(f"threshold must be in (0, 1), got {self.threshold}")
        if not self.rho > 0:
            raise ConfigError(f"rho must be positive, got {self.rho}")
        bad = [a for a in self.angles if not abs(a) <= MAX_ANGLE]
        if bad:
            raise ConfigError(f"perturbation angles {bad} outside +/-{MAX_ANGLE} degrees")
        if self.n_per_class < 0 or self.test_per_class < 0:
            raise ConfigError("per-class counts must be non-negative")
        if self.epochs < 1 or self.workers < 1:
            raise ConfigError("epochs and workers must be at least 1")
        try:
            self.network_config()
        except ARNError as exc:
            raise ConfigError(str(exc)) from exc

    def network_config(self) -> NetworkConfig:
        return NetworkConfig(
            tiling=TilingSpec(rows=self.grid_rows, cols=self.grid_cols),
            k_cap=self.k_cap,
            rho=self.rho,
            threshold=self.threshold,
            l1_threshold=self.l1_threshold,
            l2_rho_scale=self.l2_rho_scale,
            pixel_floor=self.pixel_floor,
            jitter=self.jitter,
            dilation_factor=self.dilation_factor,
            dilation_steps=self.dilation_steps,
            blank_level=self.blank_level,
            tuning=self.tuning,
        )

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        """Short hash of everything that affects results (the output directory does not)."""
        d = self.to_dict()
        d.pop("output_dir")
        d.pop("workers")
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes: Any) -> "RunConfig":
        return from_mapping({**self.to_dict(), **changes})


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def from_mapping(data: dict) -> RunConfig:
    unknown = sorted(set(data) - set(FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    try:
        cfg = RunConfig(**data)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    if not isinstance(cfg.angles, list):
        cfg.angles = list(cfg.angles)
    return cfg


def load_config(
    path: Optional[str | Path], overrides: Optional[dict] = None, base: Optional[dict] = None
) -> RunConfig:
    """Layer ``base``, then the file, then any non-``None`` overrides."""
    data: dict = dict(base or {})
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            loaded = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML/JSON: {exc}") from exc
        if loaded is not None and not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a mapping")
        data.update(loaded or {})
    data.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_mapping(data)


def write_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=True))
