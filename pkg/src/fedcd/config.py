"""Experiment files: strict YAML documents with nested sections.

Unknown keys are errors. Command-line overrides use dotted paths
(``training.lr=0.2``) or a bare field name when it is unambiguous
(``seed=2``, ``lr=0.2``).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import yaml

from .engine import ConfigError, SimulationConfig


@dataclass
class SimulationSection:
    devices_per_round: int = 15
    local_epochs: int = 3
    total_rounds: int = 45
    milestones: list[int] = field(default_factory=lambda: [5, 15, 25, 30])
    score_window: int = 3
    late_prune_round: int = 20
    late_prune_threshold: float = 0.3
    score_noise_std: float = 0.0
    score_source: str = "global"
    clone_floor: str = "first"
    workers: int = 1


@dataclass
class TrainingSection:
    lr: float = 0.1
    batch_size: int = 32
    hidden: list[int] = field(default_factory=lambda: [32])
    activation: str = "relu"
    quant_bits: int = 0


@dataclass
class DataSection:
    scheme: str = "hierarchical"
    source: str = "synthetic"
    csv_path: Optional[str] = None
    n_classes: int = 10
    feature_dim: int = 16
    per_class: int = 1000
    spread: float = 3.0
    samples_per_device: int = 600
    val_frac: float = 0.2
    test_frac: float = 0.2
    devices_per_archetype: int = 3
    n_meta: int = 2
    bias: Optional[float] = None
    bias_range: list[float] = field(default_factory=lambda: [0.6, 0.7])
    hyper_N: int = 110
    hyper_Ks: list[int] = field(default_factory=lambda: [5, 25, 45, 65, 85, 105])
    hyper_n: int = 10


@dataclass
class OutputSection:
    dir: str = "runs/default"
    wall_time: bool = False


@dataclass
class ExperimentConfig:
    seed: int = 1
    strategy: str = "fedcd"
    simulation: SimulationSection = field(default_factory=SimulationSection)
    training: TrainingSection = field(default_factory=TrainingSection)
    data: DataSection = field(default_factory=DataSection)
    output: OutputSection = field(default_factory=OutputSection)

    @property
    def n_archetypes(self) -> int:
        d = self.data
        if d.scheme == "hierarchical":
            return d.n_classes
        return len(d.hyper_Ks)

    @property
    def n_devices(self) -> int:
        return self.n_archetypes * self.data.devices_per_archetype

    def simulation_config(self, **changes) -> SimulationConfig:
        s, t = self.simulation, self.training
        kw = dict(
            n_devices=self.n_devices,
            devices_per_round=s.devices_per_round,
            local_epochs=s.local_epochs,
            total_rounds=s.total_rounds,
            milestones=tuple(s.milestones),
            score_window=s.score_window,
            late_prune_round=s.late_prune_round,
            late_prune_threshold=s.late_prune_threshold,
            score_noise_std=s.score_noise_std,
            score_source=s.score_source,
            clone_floor=s.clone_floor,
            workers=s.workers,
            quant_bits=t.quant_bits,
            lr=t.lr,
            batch_size=t.batch_size,
            hidden=tuple(t.hidden),
            activation=t.activation,
            seed=self.seed,
            strategy=self.strategy,
        )
        kw.update(changes)
        return SimulationConfig(**kw)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)


SECTIONS = {
    "simulation": SimulationSection,
    "training": TrainingSection,
    "data": DataSection,
    "output": OutputSection,
}


def _coerce(key: str, value: Any, default: Any):
    if value is None:
        return None
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false, got {value!r}")
        return value
    if isinstance(default, int) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, int):
            if isinstance(value, float) and value.is_integer():
                return int(value)
            raise ConfigError(f"{key}: expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{key}: expected a number, got {value!r}")
        return float(value)
    if isinstance(default, list):
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            value = [value]
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"{key}: expected a list, got {value!r}")
        return list(value)
    return value


def _build(cls, raw: dict, prefix: str):
    if not isinstance(raw, dict):
        raise ConfigError(f"{prefix or 'config'}: expected a mapping")
    names = {f.name: f for f in dataclasses.fields(cls)}
    for k in raw:
        if k not in names:
            raise ConfigError(f"unknown key {prefix + str(k)!r}")
    defaults = cls()
    kwargs = {}
    for name, value in raw.items():
        key = prefix + name
        if name in SECTIONS and cls is ExperimentConfig:
            kwargs[name] = _build(SECTIONS[name], value or {}, key + ".")
        else:
            kwargs[name] = _coerce(key, value, getattr(defaults, name))
    return cls(**kwargs)


def validate(cfg: ExperimentConfig) -> ExperimentConfig:
    d = cfg.data
    if d.scheme not in ("hierarchical", "hypergeometric"):
        raise ConfigError(f"data.scheme: must be hierarchical or hypergeometric, got {d.scheme!r}")
    if d.source not in ("synthetic", "csv"):
        raise ConfigError(f"data.source: must be synthetic or csv, got {d.source!r}")
    if d.source == "csv" and not d.csv_path:
        raise ConfigError("data.csv_path: required when data.source is csv")
    if d.devices_per_archetype < 1:
        raise ConfigError("data.devices_per_archetype: must be >= 1")
    if d.bias is not None and (isinstance(d.bias, bool) or not isinstance(d.bias, (int, float))):
        raise ConfigError(f"data.bias: expected a number or null, got {d.bias!r}")
    if d.bias is not None and not 0.0 <= d.bias <= 1.0:
        raise ConfigError("data.bias: must lie in [0, 1]")
    if len(d.bias_range) != 2 or not 0.0 <= d.bias_range[0] <= d.bias_range[1] <= 1.0:
        raise ConfigError("data.bias_range: must be [low, high] within [0, 1]")
    if d.scheme == "hierarchical" and not 1 <= d.n_meta <= d.n_classes:
        raise ConfigError("data.n_meta: must be between 1 and n_classes")
    # surfaces SimulationConfig invariant violations with their key names
    cfg.simulation_config()
    return cfg


def from_dict(raw: dict) -> ExperimentConfig:
    return validate(_build(ExperimentConfig, raw or {}, ""))


def load_config(path) -> ExperimentConfig:
    try:
        raw = yaml.safe_load(Path(path).read_text())
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from None
    return from_dict(raw or {})


def _resolve(key: str) -> tuple[str, ...]:
    parts = tuple(key.split("."))
    if len(parts) > 1:
        return parts
    top = {f.name for f in dataclasses.fields(ExperimentConfig)} - set(SECTIONS)
    if key in top:
        return parts
    hits = [s for s, cls in SECTIONS.items() if key in {f.name for f in dataclasses.fields(cls)}]
    if len(hits) == 1:
        return (hits[0], key)
    if len(hits) > 1:
        raise ConfigError(f"ambiguous key {key!r}: use one of " + ", ".join(f"{h}.{key}" for h in hits))
    raise ConfigError(f"unknown key {key!r}")


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, str]) -> ExperimentConfig:
    """Return a new config with ``key=value`` overrides applied (values parsed as YAML)."""
    raw = cfg.to_dict()
    for key, text in overrides.items():
        path = _resolve(key)
        try:
            value = yaml.safe_load(text) if isinstance(text, str) else text
        except yaml.YAMLError:
            value = text
        node = raw
        for p in path[:-1]:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"unknown key {key!r}")
            node = node[p]
        node[path[-1]] = value
    return from_dict(raw)
