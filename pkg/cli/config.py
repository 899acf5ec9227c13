"""
Run configuration shared by every management command.

Sources, highest precedence first:
  - command flags (kebab-case field names, e.g. ``--batch-size 64``)
  - a ``key=value`` file passed with ``--config`` (snake_case keys, upper case accepted)
  - the defaults below; ``output_dir`` and ``max_malformed_fraction`` default to
    ``NARM_OUTPUT_DIR`` / ``NARM_MAX_MALFORMED_FRACTION`` from settings.
"""
from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from django.conf import settings
from dotenv import dotenv_values

from dataset.pipeline import as_fraction
from dataset.records import ClickSchema
from training.config import ConfigError, TrainConfig

_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _default_output_dir() -> str:
    return str(settings.NARM_OUTPUT_DIR)


def _default_malformed_fraction() -> float:
    return float(settings.NARM_MAX_MALFORMED_FRACTION)


@dataclass(frozen=True)
class RunConfig(TrainConfig):
    input: str = ""
    output_dir: str = field(default_factory=_default_output_dir)

    # click log schema
    session_column: str = "session"
    timestamp_column: str = "ts"
    item_column: str = "item"
    delimiter: str = ","
    timestamp_format: str = "ms"
    offset_column: Optional[str] = None
    max_malformed_fraction: float = field(default_factory=_default_malformed_fraction)

    # filtering and splits
    min_session_len: int = 2
    min_item_support: int = 5
    filter_fixpoint: bool = False
    holdout_days: float = 1.0
    recent_fraction: str = "1"
    filter_test_items: bool = True

    # evaluation and baselines
    k: int = 20
    baseline: str = ""
    knn_lambda: float = 20.0
    knn_exclude_self: bool = True
    checkpoint: str = ""

    def validate(self) -> "RunConfig":
        super().validate()
        if self.k < 1:
            raise ConfigError(f"k must be at least 1, got {self.k}")
        if self.holdout_days <= 0:
            raise ConfigError(f"holdout_days must be positive, got {self.holdout_days}")
        try:
            recent = as_fraction(self.recent_fraction)
        except (ValueError, ZeroDivisionError):
            raise ConfigError(f"recent_fraction: cannot read {self.recent_fraction!r} as a fraction") from None
        if not 0 < recent <= 1:
            raise ConfigError(f"recent_fraction must lie in (0, 1], got {self.recent_fraction}")
        if not 0 <= self.max_malformed_fraction <= 1:
            raise ConfigError(f"max_malformed_fraction must lie in [0, 1], got {self.max_malformed_fraction}")
        if self.min_session_len < 2 or self.min_item_support < 1:
            raise ConfigError("min_session_len must be at least 2 and min_item_support at least 1")
        if self.timestamp_format not in ("ms", "s", "iso", "date"):
            raise ConfigError(f"unknown timestamp_format {self.timestamp_format!r}")
        if self.knn_lambda < 0:
            raise ConfigError(f"knn_lambda must be non-negative, got {self.knn_lambda}")
        return self

    def schema(self) -> ClickSchema:
        return ClickSchema(
            session_column=self.session_column,
            timestamp_column=self.timestamp_column,
            item_column=self.item_column,
            delimiter=self.delimiter,
            timestamp_format=self.timestamp_format,
            offset_column=self.offset_column or None,
        )

    def train_config(self) -> TrainConfig:
        names = {f.name for f in fields(TrainConfig)}
        return TrainConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    @property
    def out(self) -> Path:
        return Path(self.output_dir)

    @classmethod
    def load(
        cls,
        path: Optional[Union[str, Path]] = None,
        overrides: Optional[Mapping[str, Any]] = None,
    ) -> "RunConfig":
        values: Dict[str, Any] = {}
        if path:
            values.update(read_config_file(path))
        for key, value in (overrides or {}).items():
            if value is not None:
                values[key] = value
        known = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(known))
        if unknown:
            raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
        hints = typing.get_type_hints(cls)
        coerced = {key: _coerce(key, value, hints[key]) for key, value in values.items()}
        return cls(**coerced).validate()


def read_config_file(path: Union[str, Path]) -> Dict[str, Optional[str]]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    return {key.strip().lower(): value for key, value in dotenv_values(path).items()}


def _coerce(key: str, value: Any, hint: Any) -> Any:
    if typing.get_origin(hint) is Union:
        hint = next(a for a in typing.get_args(hint) if a is not type(None))
        if value is None or value == "":
            return None
    if not isinstance(value, str):
        return value
    text = value.strip()
    try:
        if hint is bool:
            if text.lower() in _TRUE:
                return True
            if text.lower() in _FALSE:
                return False
            raise ValueError(text)
        if hint is int:
            return int(text)
        if hint is float:
            return float(text)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {value!r} as {hint.__name__}") from None
    return value
