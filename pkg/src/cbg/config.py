"""Experiment configuration: defaults, config files, validation."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .audit import DEFAULT_ALPHA, DEFAULT_MIN_SAMPLES, StateMapper
from .embedding import HistoryClassifier
from .engine import ConfigurationError, Eligibility, Regime
from .events import MAX_AGENTS


@dataclass(frozen=True)
class ExperimentConfig:
    n: int = 3
    regime: Regime = Regime.NO_REPEAT
    eligibility: Eligibility = Eligibility.ALL_AGENTS
    episodes: int = 1000
    seed: int = 0
    p_accept: float = 0.5
    mapper: StateMapper = StateMapper.NAIVE
    classifier: HistoryClassifier = HistoryClassifier.REJECTED_SET
    alpha: float = DEFAULT_ALPHA
    min_samples: int = DEFAULT_MIN_SAMPLES
    out: str | None = None
    workers: int = 1
    max_rounds: int | None = None
    # learning runs
    learning_rate: float = 0.1
    discount: float = 0.95
    epsilon: float = 0.1
    epsilon_min: float = 0.01
    r_acc: float = 1.0
    r_step: float = -0.05

    def __post_init__(self) -> None:
        if not 1 <= self.n <= MAX_AGENTS:
            raise ConfigurationError(f"n must be in [1, {MAX_AGENTS}], got {self.n}")
        if self.episodes < 0:
            raise ConfigurationError("episodes must be >= 0")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must be a 64-bit unsigned integer")
        if not 0.0 <= self.p_accept <= 1.0:
            raise ConfigurationError("p_accept must lie in [0, 1]")
        if not 0.0 <= self.alpha <= 1.0:
            raise ConfigurationError("alpha must lie in [0, 1]")
        if self.min_samples < 1:
            raise ConfigurationError("min_samples must be >= 1")
        if self.workers < 1:
            raise ConfigurationError("workers must be >= 1")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ConfigurationError("max_rounds must be >= 1")

    def with_overrides(self, overrides: Mapping[str, Any]) -> ExperimentConfig:
        return replace(self, **_coerce(overrides))


_FIELDS = {f.name: f for f in fields(ExperimentConfig)}
_ENUMS = {
    "regime": Regime,
    "eligibility": Eligibility,
    "mapper": StateMapper,
    "classifier": HistoryClassifier,
}
_INTS = {"n", "episodes", "seed", "min_samples", "workers", "max_rounds"}
_FLOATS = {"p_accept", "alpha", "learning_rate", "discount", "epsilon", "epsilon_min", "r_acc", "r_step"}


def _coerce(raw: Mapping[str, Any]) -> dict[str, Any]:
    out = {}
    for key, value in raw.items():
        name = key.replace("-", "_")
        if name not in _FIELDS:
            raise ConfigurationError(f"unknown config field {key!r}")
        try:
            if value is None or (isinstance(value, str) and value.lower() in ("none", "")):
                out[name] = None
            elif name in _ENUMS:
                out[name] = value if isinstance(value, _ENUMS[name]) else _ENUMS[name](str(value))
            elif name in _INTS:
                out[name] = int(value)
            elif name in _FLOATS:
                out[name] = float(value)
            else:
                out[name] = str(value)
        except ValueError as exc:
            raise ConfigurationError(f"bad value for {key!r}: {value!r}") from exc
    return out


def load_config_file(path: str | Path) -> dict[str, Any]:
    """JSON object, or ``key = value`` lines with ``#`` comments."""
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        data = json.loads(text)
        if not isinstance(data, dict):
            raise ConfigurationError("config file must hold an object")
        return data
    data = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        data[key] = value
    return data


def build_config(file_values: Mapping[str, Any] | None = None, flags: Mapping[str, Any] | None = None) -> ExperimentConfig:
    merged = dict(_coerce(file_values or {}))
    merged.update(_coerce({k: v for k, v in (flags or {}).items() if v is not None}))
    return ExperimentConfig(**merged)
