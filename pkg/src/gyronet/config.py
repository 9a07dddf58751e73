"""Experiment configuration: a flat ``key = value`` document plus overrides."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Mapping

from .ball import SafetyConfig
from .optim import HYPERBOLIC_METHODS

GEOMETRIES = ("hyperbolic", "euclidean")
# (encoder, ffnn, mlr) rows allowed per cell type
ALLOWED_STAGES = (
    ("euclidean", "euclidean", "euclidean"),
    ("hyperbolic", "hyperbolic", "euclidean"),
    ("hyperbolic", "hyperbolic", "hyperbolic"),
)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    geometry_encoder: str = "hyperbolic"
    geometry_ffnn: str = "hyperbolic"
    geometry_mlr: str = "hyperbolic"
    cell: str = "gru"
    dim: int = 5
    c: float = 1.0
    batch: int = 64
    epochs: int = 30
    runs: int = 3
    seed: int = 0
    lr_euclidean: float = 0.001
    lr_embedding: float = 0.1
    lr_hyperbolic: float = 0.01
    optimizer_hyperbolic: str = "rsgd_full"
    nonlin_cell: str = "auto"
    nonlin_ffnn: str = "auto"
    bucket: bool = True
    data: str = ""
    safety_ball_eps: float = 1e-5
    safety_origin_eps: float = 1e-15
    safety_tanh_clamp: float = 15.0
    safety_atanh_clamp: float = 1.0 - 1e-5

    def __post_init__(self):
        stages = (self.geometry_encoder, self.geometry_ffnn, self.geometry_mlr)
        if stages not in ALLOWED_STAGES:
            raise ConfigError(f"unsupported stage geometry combination {stages}")
        if self.cell not in ("rnn", "gru"):
            raise ConfigError(f"cell must be rnn or gru, got {self.cell!r}")
        for name in ("dim", "batch", "runs"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.epochs < 0:
            raise ConfigError("epochs must be >= 0")
        if self.c < 0:
            raise ConfigError("c must be >= 0")
        for name in ("lr_euclidean", "lr_embedding", "lr_hyperbolic"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.optimizer_hyperbolic not in HYPERBOLIC_METHODS:
            raise ConfigError(f"optimizer.hyperbolic must be one of {HYPERBOLIC_METHODS}")
        for name in ("nonlin_cell", "nonlin_ffnn"):
            if getattr(self, name) not in ("auto", "identity", "tanh", "relu"):
                raise ConfigError(f"{name} has unknown nonlinearity")
        try:
            self.safety
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def hyperbolic_encoder(self) -> bool:
        return self.geometry_encoder == "hyperbolic"

    @property
    def safety(self) -> SafetyConfig:
        return SafetyConfig(self.safety_ball_eps, self.safety_origin_eps, self.safety_tanh_clamp,
                            self.safety_atanh_clamp)

    @property
    def cell_nonlinearity(self) -> str:
        if self.nonlin_cell != "auto":
            return self.nonlin_cell
        return "identity" if self.hyperbolic_encoder else "tanh"

    @property
    def ffnn_nonlinearity(self) -> str:
        if self.nonlin_ffnn != "auto":
            return self.nonlin_ffnn
        return "identity" if self.geometry_ffnn == "hyperbolic" else "relu"

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_items(self) -> list[tuple[str, str]]:
        return [(key_name(f.name), _fmt(getattr(self, f.name))) for f in fields(self)]

    def to_text(self) -> str:
        return "".join(f"{k} = {v}\n" for k, v in self.to_items())


def key_name(field_name: str) -> str:
    """``lr_euclidean`` -> ``lr.euclidean`` (the external spelling)."""
    head, _, tail = field_name.partition("_")
    if head in ("geometry", "lr", "optimizer", "nonlin", "safety") and tail:
        return f"{head}.{tail}"
    return field_name


def field_name(key: str) -> str:
    return key.strip().replace(".", "_").replace("-", "_")


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(kind: type, raw: str):
    if kind is bool:
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"not a boolean: {raw!r}")
    return kind(raw.strip())


_TYPES = {"int": int, "float": float, "str": str, "bool": bool}


def from_mapping(values: Mapping[str, str], base: ExperimentConfig | None = None) -> ExperimentConfig:
    known = {f.name: _TYPES[f.type] if isinstance(f.type, str) else f.type for f in fields(ExperimentConfig)}
    changes = {}
    for key, raw in values.items():
        name = field_name(key)
        if name not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            changes[name] = _coerce(known[name], str(raw))
        except ValueError as exc:
            raise ConfigError(f"bad value for {key}: {exc}") from None
    return dataclasses.replace(base or ExperimentConfig(), **changes)


def parse_text(text: str) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, val = line.partition("=")
        if not sep:
            raise ConfigError(f"line {lineno}: expected key = value")
        out[key.strip()] = val.strip()
    return out


def load_config(path: str | Path | None = None, overrides: Mapping[str, str] | None = None) -> ExperimentConfig:
    values: dict[str, str] = {}
    if path:
        try:
            values.update(parse_text(Path(path).read_text(encoding="utf-8")))
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from None
    values.update(overrides or {})
    return from_mapping(values)
