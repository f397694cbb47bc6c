"""Run configuration: one YAML file with a section per stage.

Every field has a default, so an empty file is a valid config. Unknown keys
are rejected at any depth. ``GAUGEPIPE_SEED`` overrides ``seed``.
"""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .augment import AugmentPolicy
from .models import ReadModelConfig, SegModelConfig
from .synth import SynthRanges

SEED_ENV = "GAUGEPIPE_SEED"


class ConfigError(ValueError):
    pass


@dataclass
class SynthSection:
    count: int = 500
    canvas: tuple[int, int] = (128, 128)  # (H, W)
    val_fraction: float = 0.2
    workers: int = 1
    ranges: SynthRanges = field(default_factory=SynthRanges)


@dataclass
class TrainSection:
    # reading-net mask channel during training: predicted, oracle or none
    mask_source: str = "predicted"


@dataclass
class PipelineSection:
    use_crop: bool = True
    use_seg: bool = True
    low_confidence: float = 0.2


@dataclass
class EvalSection:
    predictions: str = ""
    truth: str = ""
    tick_value: float = 1.0
    correct_explement: bool = False
    out_dir: str = "report"


@dataclass
class RunConfig:
    seed: int = 0
    synth: SynthSection = field(default_factory=SynthSection)
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    seg_train: SegModelConfig = field(default_factory=SegModelConfig)
    read_train: ReadModelConfig = field(default_factory=ReadModelConfig)
    train: TrainSection = field(default_factory=TrainSection)
    pipeline: PipelineSection = field(default_factory=PipelineSection)
    eval: EvalSection = field(default_factory=EvalSection)

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.dumps())
        return path

    @classmethod
    def from_dict(cls, data: dict | None) -> "RunConfig":
        return _build(cls, data or {}, "")

    @classmethod
    def loads(cls, text: str) -> "RunConfig":
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"malformed config: {exc}") from None
        if data is not None and not isinstance(data, dict):
            raise ConfigError("config must be a mapping at the top level")
        return cls.from_dict(data)


def _plain(value):
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    return value


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def _build(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{where or 'config'}: expected a mapping, got {type(data).__name__}")
    known = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        raise ConfigError(f"{where or 'config'}: unknown keys {unknown}")
    kwargs = {}
    for name, value in data.items():
        f = known[name]
        default = f.default_factory() if f.default_factory is not dataclasses.MISSING else f.default
        key = f"{where}.{name}" if where else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value or {}, key)
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{key}: expected a list, got {value!r}")
            kwargs[name] = _tupled(value)
        else:
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where or 'config'}: {exc}") from None


def load_config(path=None, environ=None) -> RunConfig:
    """Read ``path`` (defaults only if None) and apply the seed override."""
    if path is None:
        cfg = RunConfig()
    else:
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        cfg = RunConfig.loads(path.read_text())
    env = os.environ if environ is None else environ
    if env.get(SEED_ENV, "").strip():
        try:
            cfg.seed = int(env[SEED_ENV])
        except ValueError:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from None
    return cfg
