"""Run configuration: one TOML table per stage, range-checked, unknown keys rejected."""
from __future__ import annotations

import dataclasses
import sys
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class RunSection:
    seed: int = 0
    out_dir: str = "out"
    jobs: int = 1
    fps: float = 3.0


@dataclass
class ToySection:
    frames: int = 3600
    width: int = 320
    height: int = 240
    orbit_period: int = 90
    drift: float = 0.10
    drift_period: int = 1800


@dataclass
class FrameSection:
    width: int = 320
    height: int = 240


@dataclass
class FeaturesSection:
    alpha: float = 0.95
    n_delay: int = 30
    K: int = 10
    strong_edge_threshold: float = 100.0
    harris_threshold: float = 1e6
    keypoint_refresh: int = 30
    e4_and_only: bool = False


@dataclass
class SynthSection:
    source: str = ""
    enabled: bool = True
    period_s: float = 600.0
    dur_min_s: float = 120.0
    dur_max_s: float = 180.0
    extent: float = 1.0
    rate_frames: int = 0
    fill: str = "noise"


@dataclass
class TsaSection:
    p_max: int = 6
    q_max: int = 6
    d: int = 1
    window: int = 1000
    segment_frames: int = 10800


@dataclass
class EvalSection:
    warmup_frames: int = 300


@dataclass
class RunConfig:
    run: RunSection = field(default_factory=RunSection)
    toy: ToySection = field(default_factory=ToySection)
    frame: FrameSection = field(default_factory=FrameSection)
    features: FeaturesSection = field(default_factory=FeaturesSection)
    synth: SynthSection = field(default_factory=SynthSection)
    tsa: TsaSection = field(default_factory=TsaSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def validate(self) -> "RunConfig":
        checks = [
            (self.run.jobs >= 1, "run.jobs must be >= 1"),
            (self.run.fps > 0, "run.fps must be > 0"),
            (self.toy.frames >= 1, "toy.frames must be >= 1"),
            (self.toy.width >= 64 and self.toy.height >= 64, "toy scene must be at least 64x64"),
            (self.toy.orbit_period >= 1 and self.toy.drift_period >= 1, "toy periods must be >= 1"),
            (0 <= self.toy.drift < 1, "toy.drift must lie in [0, 1)"),
            (self.frame.width >= 7 and self.frame.height >= 7, "frame size must be at least 7x7"),
            (0 <= self.features.alpha < 1, "features.alpha must lie in [0, 1)"),
            (self.features.n_delay >= 1, "features.n_delay must be >= 1"),
            (0 <= self.features.K <= 255, "features.K must lie in [0, 255]"),
            (self.features.strong_edge_threshold >= 0, "features.strong_edge_threshold must be >= 0"),
            (self.features.harris_threshold >= 0, "features.harris_threshold must be >= 0"),
            (self.features.keypoint_refresh >= 1, "features.keypoint_refresh must be >= 1"),
            (self.synth.period_s > 0, "synth.period_s must be > 0"),
            (0 < self.synth.dur_min_s <= self.synth.dur_max_s <= self.synth.period_s,
             "synth durations must satisfy 0 < dur_min_s <= dur_max_s <= period_s"),
            (0 < self.synth.extent <= 1, "synth.extent must lie in (0, 1]"),
            (self.synth.rate_frames >= 0, "synth.rate_frames must be >= 0"),
            (self.synth.fill in ("noise", "flat"), "synth.fill must be 'noise' or 'flat'"),
            (self.tsa.p_max >= 0 and self.tsa.q_max >= 0, "tsa grid caps must be >= 0"),
            (self.tsa.d >= 0, "tsa.d must be >= 0"),
            (self.tsa.window >= 1, "tsa.window must be >= 1"),
            (self.tsa.segment_frames >= 30, "tsa.segment_frames must be >= 30"),
            (self.eval.warmup_frames >= 1, "eval.warmup_frames must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


def _coerce(section: str, key: str, value: Any, target: Any) -> Any:
    kind = type(target)
    if kind is bool:
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "false"):
            return value.lower() == "true"
    elif kind is int:
        if isinstance(value, int) and not isinstance(value, bool):
            return value
        if isinstance(value, float) and value.is_integer():
            return int(value)
    elif kind is float:
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return float(value)
    elif kind is str:
        if isinstance(value, str):
            return value
    raise ConfigError(f"{section}.{key}: expected {kind.__name__}, got {value!r}")


def apply(config: RunConfig, data: dict) -> RunConfig:
    names = {f.name for f in fields(config)}
    for section, values in data.items():
        if section not in names:
            raise ConfigError(f"unknown config section [{section}]")
        if not isinstance(values, dict):
            raise ConfigError(f"[{section}] must be a table")
        obj = getattr(config, section)
        keys = {f.name for f in fields(obj)}
        for key, value in values.items():
            if key not in keys:
                raise ConfigError(f"unknown config key {section}.{key}")
            setattr(obj, key, _coerce(section, key, value, getattr(obj, key)))
    return config


def parse_override(text: str) -> dict:
    """``section.key=value``; the value is read as a TOML literal, else as a bare string."""
    if "=" not in text:
        raise ConfigError(f"--set expects section.key=value, got {text!r}")
    path, raw = text.split("=", 1)
    parts = path.strip().split(".")
    if len(parts) != 2 or not all(parts):
        raise ConfigError(f"--set key must look like section.key, got {path!r}")
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return {parts[0]: {parts[1]: value}}


def load_config(path: str | Path | None = None, overrides: list[str] = ()) -> RunConfig:
    config = RunConfig()
    if path is not None:
        try:
            with open(path, "rb") as fh:
                data = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"invalid config {path}: {exc}") from None
        apply(config, data)
    for item in overrides:
        apply(config, parse_override(item))
    return config.validate()


def derive_seed(root: int, stream: str) -> int:
    """Independent 32-bit seed for a named stage, expanded from the root seed."""
    ss = np.random.SeedSequence([int(root) & 0xFFFFFFFF, zlib.crc32(stream.encode())])
    return int(ss.generate_state(1)[0])
