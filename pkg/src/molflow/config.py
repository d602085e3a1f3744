"""Experiment configuration: one YAML file, unknown keys rejected."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .conditioner import KINDS, NON_AFFINE, ConditionerConfig
from .errors import ConfigError, UserError
from .optim import TrainConfig
from .signal import CorpusConfig, StftConfig


@dataclass(frozen=True)
class StudentConfig:
    flow_layers: tuple = (3, 5)
    channels: int = 16
    kernel_size: int = 2
    dilation_cycle: int = 10
    n_mixtures: int = 10
    kind: str = NON_AFFINE
    cond_channels: int = 2

    def conditioner_configs(self, kind=None):
        kind = kind or self.kind
        if kind not in KINDS:
            raise ConfigError(f"unknown transform kind {kind!r}")
        return [ConditionerConfig(layers=n, channels=self.channels, kernel_size=self.kernel_size,
                                  dilation_cycle=self.dilation_cycle, n_mixtures=self.n_mixtures,
                                  kind=kind, cond_channels=self.cond_channels)
                for n in self.flow_layers]


@dataclass(frozen=True)
class EvalConfig:
    mc_samples: int = 4


def _teacher_default():
    return ConditionerConfig(layers=4, channels=16, kernel_size=2, dilation_cycle=10, n_mixtures=10)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    corpus: CorpusConfig = field(default_factory=CorpusConfig)
    teacher: ConditionerConfig = field(default_factory=_teacher_default)
    student: StudentConfig = field(default_factory=StudentConfig)
    teacher_train: TrainConfig = field(default_factory=lambda: TrainConfig(
        lr=1e-3, batch=8, clip_len=256, iterations=2000))
    distill: TrainConfig = field(default_factory=TrainConfig)
    power_stft: StftConfig = field(default_factory=lambda: StftConfig(256, 64))
    metric_stft: StftConfig = field(default_factory=StftConfig)
    evaluate: EvalConfig = field(default_factory=EvalConfig)

    def with_seed(self, seed):
        if seed is None:
            return self
        return dataclasses.replace(self, seed=int(seed))

    def train_config(self, section):
        cfg = getattr(self, section)
        return dataclasses.replace(cfg, seed=self.seed)

    def to_dict(self):
        return dataclasses.asdict(self)


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(fields))
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    kwargs = {}
    defaults = cls()
    for name, value in data.items():
        current = getattr(defaults, name)
        if dataclasses.is_dataclass(current):
            kwargs[name] = _build(type(current), value, f"{where}.{name}")
        elif isinstance(current, tuple):
            kwargs[name] = tuple(value)
        elif isinstance(current, float) and not isinstance(value, bool):
            # PyYAML reads "1e-4" (no dot) as a string
            try:
                kwargs[name] = float(value)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{where}.{name}: expected a number, got {value!r}") from exc
        elif isinstance(current, int) and not isinstance(current, bool):
            if isinstance(value, bool) or not isinstance(value, int):
                raise ConfigError(f"{where}.{name}: expected an integer, got {value!r}")
            kwargs[name] = value
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError, UserError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def config_from_dict(data) -> ExperimentConfig:
    return _build(ExperimentConfig, data or {}, "config")


def load_config(path=None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig):
    def plain(obj):
        if isinstance(obj, dict):
            return {k: plain(v) for k, v in obj.items()}
        if isinstance(obj, (list, tuple)):
            return [plain(v) for v in obj]
        return obj
    return yaml.safe_dump(plain(cfg.to_dict()), sort_keys=False)
