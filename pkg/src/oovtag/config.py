"""Run configuration with JSON-file and flag overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping


class ConfigError(ValueError):
    pass


@dataclass
class Config:
    word_dim: int = 50
    char_dim: int = 16
    char_filters: int = 25
    char_widths: list = field(default_factory=lambda: [3, 5])
    lstm_hidden: int = 50
    encoder: str = "bilstm"
    lr: float = 1e-3
    k_ngram: int = 3
    K_iter: int = 2
    oov_threshold: int = 5
    batch_size: int = 16
    max_epochs: int = 100
    patience: int = 5
    seed: int = 0
    replace_mode: str = "all-below-threshold"
    student_update_mode: str = "accumulate"
    task: str = "pos"
    # settings below are not fixed by the method description
    context_hidden: int = 25
    cnn_channels: int = 100
    vocab_min_freq: int = 1
    crf_potentials: str = "pair"
    multi_oov_prob: float = 0.5
    lowercase: bool = False

    def __post_init__(self):
        choices = {
            "encoder": ("bilstm", "cnn3"),
            "replace_mode": ("all-below-threshold", "unseen-only"),
            "student_update_mode": ("accumulate", "per-position"),
            "task": ("pos", "ner"),
            "crf_potentials": ("pair", "split"),
        }
        for key, allowed in choices.items():
            if getattr(self, key) not in allowed:
                raise ConfigError(f"{key} must be one of {allowed}, got {getattr(self, key)!r}")
        if self.K_iter < 0:
            raise ConfigError("K_iter must be >= 0")
        if self.oov_threshold < 1:
            raise ConfigError("oov_threshold must be >= 1")

    @property
    def char_out(self) -> int:
        return self.char_filters * len(self.char_widths)

    @property
    def embed_dim(self) -> int:
        return self.word_dim + self.char_out

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def replace(self, **changes) -> "Config":
        return coerce({**self.to_dict(), **changes})


FIELDS = {f.name: f for f in dataclasses.fields(Config)}


def _coerce_value(key: str, value: Any) -> Any:
    default = Config().to_dict()[key]
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        if isinstance(value, str) and value.lower() in ("true", "1", "yes", "false", "0", "no"):
            return value.lower() in ("true", "1", "yes")
        raise ConfigError(f"type mismatch for {key}: expected bool, got {value!r}")
    if isinstance(default, int):
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"type mismatch for {key}: expected int, got {value!r}")
        try:
            return int(value)
        except (TypeError, ValueError):
            raise ConfigError(f"type mismatch for {key}: expected int, got {value!r}") from None
    if isinstance(default, float):
        if isinstance(value, bool):
            raise ConfigError(f"type mismatch for {key}: expected float, got {value!r}")
        try:
            return float(value)
        except (TypeError, ValueError):
            raise ConfigError(f"type mismatch for {key}: expected float, got {value!r}") from None
    if isinstance(default, list):
        if isinstance(value, str):
            value = [v for v in value.split(",") if v]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"type mismatch for {key}: expected list, got {value!r}")
        try:
            return [int(v) for v in value]
        except (TypeError, ValueError):
            raise ConfigError(f"type mismatch for {key}: expected list of ints, got {value!r}") from None
    if not isinstance(value, str):
        raise ConfigError(f"type mismatch for {key}: expected string, got {value!r}")
    return value


def coerce(values: Mapping[str, Any]) -> Config:
    for key in values:
        if key not in FIELDS:
            raise ConfigError(f"unknown key: {key}")
    return Config(**{k: _coerce_value(k, v) for k, v in values.items()})


def parse_config(path=None, overrides: Mapping[str, Any] | None = None,
                 base: Mapping[str, Any] | None = None) -> Config:
    """Defaults, then ``base``, then the JSON file, then explicit overrides (highest precedence)."""
    values: dict[str, Any] = dict(base or {})
    if path is not None:
        text = Path(path).read_text(encoding="utf-8").strip()
        if text:
            try:
                data = json.loads(text)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
            if not isinstance(data, dict):
                raise ConfigError(f"{path}: config must be a JSON object")
            for key in data:
                if key not in FIELDS:
                    raise ConfigError(f"unknown key: {key}")
            values.update(data)
    for key in values:
        if key not in FIELDS:
            raise ConfigError(f"unknown key: {key}")
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return coerce(values)


def flag_name(key: str) -> str:
    return "--" + key.replace("_", "-")
