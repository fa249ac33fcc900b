"""Pipeline configuration: dataclass defaults, ``key = value`` files, flag overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .filtering import FilterParams
from .fingerprint import PairParams, PeakParams, StftParams

CONFIG_ENV = "CONCERTFP_CONFIG"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    analysis_rate: int = 11025
    window_size: int = 512
    hop_size: int = 256
    peak_neighborhood_frames: int = 10
    peak_neighborhood_bins: int = 15
    peaks_per_frame: int = 5
    peak_floor: float = 1e-6
    fan_out: int = 3
    dt_max: int = 63
    df_max: int = 31
    t_l: int = 5
    t_d: float = -0.07
    strict_filter: bool = False
    jobs: int = 1
    input_dir: str = ""
    db_path: str = "fingerprints.cldb"
    out_dir: str = "reports"

    def __post_init__(self) -> None:
        if self.analysis_rate <= 0:
            raise ConfigError("analysis_rate must be positive")
        if self.jobs < 1:
            raise ConfigError("jobs must be >= 1")
        try:
            self.stft, self.peaks, self.pairing, self.filter_params
        except ValueError as e:
            raise ConfigError(str(e)) from e

    @property
    def stft(self) -> StftParams:
        return StftParams(self.window_size, self.hop_size)

    @property
    def peaks(self) -> PeakParams:
        return PeakParams(
            self.peak_neighborhood_frames, self.peak_neighborhood_bins, self.peaks_per_frame, self.peak_floor
        )

    @property
    def pairing(self) -> PairParams:
        return PairParams(self.fan_out, self.dt_max, self.df_max)

    @property
    def filter_params(self) -> FilterParams:
        return FilterParams(self.t_l, self.t_d, self.strict_filter)

    @property
    def frame_s(self) -> float:
        return self.hop_size / self.analysis_rate

    def fingerprint_kwargs(self) -> dict:
        return {"stft": self.stft, "peaks": self.peaks, "pairing": self.pairing}

    def replace(self, **overrides: Any) -> "PipelineConfig":
        overrides = {k: v for k, v in overrides.items() if v is not None}
        _check_keys(overrides)
        return dataclasses.replace(self, **overrides)

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _check_keys(keys) -> None:
    unknown = sorted(set(keys) - set(_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")


def _coerce(key: str, text: str) -> Any:
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {text!r} as {kind}") from None
    return text


def parse_config(text: str) -> dict[str, Any]:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        _check_keys([key])
        out[key] = _coerce(key, value)
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Defaults, then the config file (``path`` or ``$CONCERTFP_CONFIG``), then overrides."""
    values: dict[str, Any] = {}
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        values.update(parse_config(p.read_text()))
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    _check_keys(values)
    return PipelineConfig(**values)
