"""Strict JSON experiment configuration."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

from .clustering import ClusteringConfig, RefinementConfig
from .datagen import CorpusConfig
from .margin_loss import MarginParams


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSection:
    preset: str = "small"  # "small" or "full"
    tdnn_layer_contexts: list | None = None
    tdnn_hidden_dim: int | None = None
    frame_output_dim: int | None = None
    attention_heads: int | None = None
    attention_hidden_dim: int | None = None
    embedding_dim: int | None = None
    penalty_weight: float | None = None

    def overrides(self):
        return {f.name: getattr(self, f.name) for f in dataclasses.fields(self)
                if f.name != "preset" and getattr(self, f.name) is not None}


@dataclass(frozen=True)
class MarginSection:
    m1: float = 1.0
    m2: float = 0.0
    m3: float = 0.0
    eta: float | None = None
    overlap_gating: bool = True
    approx_mode: bool = False

    @property
    def params(self):
        return MarginParams(self.m1, self.m2, self.m3)


@dataclass(frozen=True)
class TrainingSection:
    epochs: int = 10
    batch_size: int = 200
    lr: float = 1e-2
    lr_decay: float = 0.5
    lr_decay_every: int = 5
    warmup_epochs: int = 1
    window_s: float = 2.0
    shift_s: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class ClusteringSection:
    row_threshold_percentile: float = 0.90
    apply_symmetrise: bool = True
    apply_row_max_normalise: bool = True
    apply_degree_normalise: bool = False
    max_k: int = 10
    kmeans_restarts: int = 10

    def build(self):
        ref = RefinementConfig(self.row_threshold_percentile, self.apply_symmetrise,
                               self.apply_row_max_normalise, self.apply_degree_normalise)
        return ClusteringConfig(ref, self.max_k, self.kmeans_restarts)


@dataclass(frozen=True)
class ScoringSection:
    collar: float = 0.25


@dataclass(frozen=True)
class ExperimentConfig:
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    network: NetworkSection = field(default_factory=NetworkSection)
    margins: MarginSection = field(default_factory=MarginSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    clustering: ClusteringSection = field(default_factory=ClusteringSection)
    scoring: ScoringSection = field(default_factory=ScoringSection)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected an object")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in data.items():
        default = known[name].default_factory() if known[name].default_factory is not dataclasses.MISSING else None
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, f"{where}.{name}")
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def parse_config(data) -> ExperimentConfig:
    return _build(ExperimentConfig, data, "config")


def load_config(path) -> ExperimentConfig:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    return parse_config(data)
