"""Run configuration: defaults, flat ``key = value`` files, flag overrides."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .errors import ConfigError


@dataclass(frozen=True)
class RunConfig:
    trace_depth: int = 20
    max_tree_nodes: int = 200_000
    token_budget: int = 50_000
    min_narratives: int = 3
    frontier_cap: int = 20
    weak_confidence: float = 0.2
    weak_after_iters: int = 3
    convergence_confidence: float = 0.9
    max_iterations: int = 8
    select_targets_max: int = 3
    frontier_listing_max: int = 10
    fix_retry_limit: int = 2
    fuzzy_threshold: float = 0.7
    suspicion_floor: float = 0.5
    ranking_mode: str = "batch"
    mode: str = "live"
    cassette: str | None = None
    strict_replay: bool = True
    max_in_flight: int = 4
    adapter_timeout: float = 60.0
    mrr_threshold: float = 0.5
    binary_ndcg: bool = False

    def validate(self) -> "RunConfig":
        for name in ("weak_confidence", "convergence_confidence", "suspicion_floor", "mrr_threshold"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must be in [0, 1], got {v}")
        if not 0.0 < self.fuzzy_threshold <= 1.0:
            raise ConfigError(f"fuzzy_threshold must be in (0, 1], got {self.fuzzy_threshold}")
        for name in (
            "trace_depth", "max_tree_nodes", "token_budget", "min_narratives", "frontier_cap", "max_iterations",
            "select_targets_max", "frontier_listing_max", "max_in_flight", "weak_after_iters",
        ):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.fix_retry_limit < 0:
            raise ConfigError("fix_retry_limit must be non-negative")
        if self.adapter_timeout <= 0:
            raise ConfigError("adapter_timeout must be positive")
        if self.ranking_mode not in ("batch", "tournament"):
            raise ConfigError(f"ranking_mode must be batch or tournament, got {self.ranking_mode!r}")
        if self.mode not in ("live", "record", "replay"):
            raise ConfigError(f"mode must be live, record or replay, got {self.mode!r}")
        if self.mode in ("replay", "record") and not self.cassette:
            raise ConfigError(f"{self.mode} mode requires a cassette path")
        return self

    def as_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}
_TYPES = {f.name: type(getattr(RunConfig(), f.name)) for f in fields(RunConfig)}
_TYPES["cassette"] = str


def _coerce(name: str, raw: str):
    kind = _TYPES[name]
    text = raw.strip()
    try:
        if kind is bool:
            low = text.lower()
            if low not in ("true", "false", "yes", "no", "1", "0", "on", "off"):
                raise ValueError(text)
            return low in ("true", "yes", "1", "on")
        if kind is int:
            return int(text.replace("_", "").replace(",", ""))
        if kind is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{name}: cannot read {raw!r} as {kind.__name__}") from None
    return text


def normalize_key(key: str) -> str:
    return key.strip().replace("-", "_")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    values = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, raw = line.split("=", 1)
        key = normalize_key(key)
        if key not in _FIELDS:
            raise ConfigError(f"{source}:{n}: unknown key {key!r}")
        values[key] = _coerce(key, raw)
    return values


def load_config(path: str | Path | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then the file, then explicit overrides (``None`` values ignored)."""
    values = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file {p} not found")
        values.update(parse_config_text(p.read_text(encoding="utf-8"), str(p)))
    for k, v in (overrides or {}).items():
        if v is not None:
            k = normalize_key(k)
            if k not in _FIELDS:
                raise ConfigError(f"unknown key {k!r}")
            values[k] = v
    return replace(RunConfig(), **values).validate()
