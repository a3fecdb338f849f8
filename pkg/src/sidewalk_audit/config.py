"""Audit configuration: one INI-style key-value file plus command-line overrides."""

from __future__ import annotations

import configparser
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .coverage import COVERAGE_THRESHOLD, DEFAULT_RADIUS_M
from .errors import ConfigError
from .geo import CELL_SIZE_BAND_M, DEFAULT_CELL_SIZE_M
from .guidance import DEFAULT_MODEL_ID
from .poi import DEFAULT_QUERY_RADIUS_M, DEFAULT_SAMPLE_SPACING_M
from .road_graph import DEFAULT_BUDGET_M
from .scoring import CLIP_PERCENTILE, FINDINGS_MIN_SEVERITY

PATH_KEYS = ("roads", "sectors", "wards", "taxonomy", "poi_taxonomy", "labels", "fixtures", "events",
             "ratings", "panoramas")


@dataclass(frozen=True)
class AuditConfig:
    roads: Path | None = None
    sectors: Path | None = None
    wards: Path | None = None
    taxonomy: Path | None = None
    poi_taxonomy: Path | None = None
    labels: Path | None = None
    fixtures: Path | None = None
    events: Path | None = None
    ratings: Path | None = None
    panoramas: Path | None = None

    query_radius: float = DEFAULT_QUERY_RADIUS_M
    sample_spacing: float = DEFAULT_SAMPLE_SPACING_M
    trace_budget: float = DEFAULT_BUDGET_M
    cell_size: float = DEFAULT_CELL_SIZE_M
    coverage_radius: float = DEFAULT_RADIUS_M
    coverage_threshold: float = COVERAGE_THRESHOLD
    findings_min_severity: int = FINDINGS_MIN_SEVERITY
    clip_percentile: float = CLIP_PERCENTILE
    aggregation: str = "network"
    workers: int = 4
    rate_limit: float | None = None
    retries: int = 3

    mode: str = "fixture"
    model_id: str = DEFAULT_MODEL_ID

    def validate(self) -> AuditConfig:
        if not self.query_radius > 0:
            raise ConfigError("query_radius must be positive")
        if not self.sample_spacing > 0:
            raise ConfigError("sample_spacing must be positive")
        if not self.trace_budget > 0:
            raise ConfigError("trace_budget must be positive")
        lo, hi = CELL_SIZE_BAND_M
        if not lo <= self.cell_size <= hi:
            raise ConfigError(f"cell_size {self.cell_size} outside [{lo}, {hi}] m")
        if not self.coverage_radius > 0:
            raise ConfigError("coverage_radius must be positive")
        if not 0.0 <= self.coverage_threshold <= 1.0:
            raise ConfigError("coverage_threshold must lie in [0, 1]")
        if self.findings_min_severity not in (1, 2, 3):
            raise ConfigError("findings_min_severity must be 1, 2 or 3")
        if not 0.0 < self.clip_percentile <= 100.0:
            raise ConfigError("clip_percentile must lie in (0, 100]")
        if self.aggregation not in ("network", "straight_line"):
            raise ConfigError("aggregation must be 'network' or 'straight_line'")
        if self.workers < 1:
            raise ConfigError("workers must be at least 1")
        if self.rate_limit is not None and not self.rate_limit > 0:
            raise ConfigError("rate_limit must be positive")
        if self.mode not in ("fixture", "live"):
            raise ConfigError("mode must be 'fixture' or 'live'")
        return self

    def require(self, *keys: str) -> None:
        """Fail unless every named path is configured and exists."""
        for key in keys:
            value = getattr(self, key)
            if value is None:
                raise ConfigError(f"missing required path {key!r}")
            if not Path(value).exists():
                raise FileNotFoundError(value)

    def with_overrides(self, overrides: Mapping[str, Any], base: Path | None = None) -> AuditConfig:
        types = {f.name: f.type for f in fields(self)}
        changes: dict[str, Any] = {}
        for key, value in overrides.items():
            if value is None:
                continue
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            changes[key] = _coerce(key, value, base)
        return replace(self, **changes)


_INT_KEYS = {"findings_min_severity", "workers", "retries"}
_FLOAT_KEYS = {"query_radius", "sample_spacing", "trace_budget", "cell_size", "coverage_radius",
               "coverage_threshold", "clip_percentile", "rate_limit"}


def _coerce(key: str, value: Any, base: Path | None) -> Any:
    try:
        if key in PATH_KEYS:
            p = Path(value)
            return p if p.is_absolute() or base is None else base / p
        if key in _INT_KEYS:
            return int(value)
        if key in _FLOAT_KEYS:
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value for {key}: {value!r}") from None
    return str(value)


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> AuditConfig:
    """Read ``[paths]``/``[params]``/``[client]`` sections; relative paths resolve against the file."""
    cfg = AuditConfig()
    if path is not None:
        path = Path(path)
        parser = configparser.ConfigParser()
        if not parser.read(path, encoding="utf-8"):
            raise FileNotFoundError(path)
        values: dict[str, Any] = {}
        for section in parser.sections():
            for key, value in parser.items(section):
                values[key] = value
        cfg = cfg.with_overrides(values, base=path.parent)
    if overrides:
        cfg = cfg.with_overrides(overrides, base=None)
    return cfg.validate()
