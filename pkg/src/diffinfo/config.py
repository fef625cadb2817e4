"""Experiment configuration: YAML files mapped onto nested dataclasses.

Unknown keys, wrong types and invalid values raise :class:`ConfigError`
naming the offending field path (e.g. ``training.batch_size``).
"""

from __future__ import annotations

import dataclasses
import types
import typing
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import yaml

from .diffusion import DiffusionSchedule
from .training import TrainingConfig

EXPERIMENTS = ("gaussian-entropy", "cfg-mi", "kelly", "train", "estimate", "logdensity")
SEED_STREAMS = ("data", "init", "training", "estimation")


class ConfigError(ValueError):
    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class FieldInvalid(ValueError):
    """Raised by section validators; the loader prefixes the section path."""

    def __init__(self, name: str, message: str):
        super().__init__(message)
        self.name = name


@dataclass
class SpecSection:
    dim_x: int = 25
    dim_y: int = 15
    noise_std: float = 1.0
    jitter: float = 1e-6

    def __post_init__(self):
        if self.dim_x < 1 or self.dim_y < 1:
            raise FieldInvalid("dim_x", "dimensions must be positive")
        if not self.noise_std > 0:
            raise FieldInvalid("noise_std", "noise_std must be positive")


@dataclass
class ScheduleSection:
    beta_min: float = 0.1
    beta_max: float = 20.0
    horizon: float = 1.0
    steps: int = 1000
    eps_time: float = 1e-3

    def __post_init__(self):
        try:
            self.build()
        except ValueError as exc:
            msg = str(exc)
            name = next((k for k in ("beta_min", "horizon", "steps", "eps_time") if k in msg), "beta_min")
            raise FieldInvalid(name, msg) from exc

    def build(self) -> DiffusionSchedule:
        return DiffusionSchedule(self.beta_min, self.beta_max, self.horizon, self.steps, self.eps_time)


@dataclass
class DataSection:
    n_train: int = 20_000
    n_eval: int = 20_000

    def __post_init__(self):
        if self.n_train < 1 or self.n_eval < 1:
            raise FieldInvalid("n_train", "sample counts must be positive")


@dataclass
class EstimatorSection:
    n_mc: int = 20_000
    analytic_n_mc: int = 20_000
    steps: int | None = None
    n_probes: int = 16

    def __post_init__(self):
        if self.n_mc < 100 or self.analytic_n_mc < 100:
            raise FieldInvalid("n_mc", "Monte-Carlo sample counts must be at least 100")
        if self.steps is not None and self.steps < 2:
            raise FieldInvalid("steps", "steps must be >= 2")


@dataclass
class GaussianEntropySection:
    noise_stds: list[float] = field(default_factory=lambda: [1.0, 0.6, 0.25])

    def __post_init__(self):
        if not self.noise_stds or any(s <= 0 for s in self.noise_stds):
            raise FieldInvalid("noise_stds", "noise_stds must be a non-empty list of positive values")


@dataclass
class CfgMiSection:
    dim_ys: list[int] = field(default_factory=lambda: [5, 10])
    weights: list[float] = field(default_factory=lambda: [0.0, 1.0, 2.0, 5.0, 6.0])
    sampler_steps: int = 1000

    def __post_init__(self):
        if not self.dim_ys or any(d < 1 for d in self.dim_ys):
            raise FieldInvalid("dim_ys", "dim_ys must be a non-empty list of positive ints")
        if not self.weights or any(w < 0 for w in self.weights):
            raise FieldInvalid("weights", "weights must be a non-empty list of non-negative values")
        if self.sampler_steps < 2:
            raise FieldInvalid("sampler_steps", "sampler_steps must be >= 2")


@dataclass
class KellySection:
    n_outcomes: int = 6
    odds: float = 6.0
    p_true: list[float] | None = None
    channel: str = "identity"
    flip: float = 0.1
    confusion: list[list[float]] | None = None
    n_throws: int = 100_000

    def __post_init__(self):
        if self.channel not in ("none", "identity", "useless", "symmetric", "matrix"):
            raise FieldInvalid("channel", "channel must be one of none, identity, useless, symmetric, matrix")
        if self.channel == "matrix" and self.confusion is None:
            raise FieldInvalid("confusion", "channel 'matrix' needs a confusion matrix")
        if not 0 <= self.flip <= 1:
            raise FieldInvalid("flip", "flip must lie in [0, 1]")
        if self.n_throws < 1:
            raise FieldInvalid("n_throws", "n_throws must be >= 1")


@dataclass
class TrainSection:
    model: str = "conditional"

    def __post_init__(self):
        if self.model not in ("conditional", "marginal"):
            raise FieldInvalid("model", "model must be 'conditional' or 'marginal'")


@dataclass
class EstimateSection:
    fields: str = "analytic"
    quantities: list[str] = field(default_factory=lambda: ["minde", "total-entropy"])
    cond_checkpoint: str | None = None
    marg_checkpoint: str | None = None

    def __post_init__(self):
        if self.fields not in ("analytic", "learned"):
            raise FieldInvalid("fields", "fields must be 'analytic' or 'learned'")
        allowed = {"minde", "total-entropy", "neural-entropy", "entropy-via-scores"}
        bad = [q for q in self.quantities if q not in allowed]
        if bad:
            raise FieldInvalid("quantities", f"unknown quantities {bad}; allowed {sorted(allowed)}")
        if self.fields == "learned" and (self.cond_checkpoint is None or self.marg_checkpoint is None):
            raise FieldInvalid("cond_checkpoint", "learned fields need cond_checkpoint and marg_checkpoint")
        if self.fields == "analytic" and "neural-entropy" in self.quantities:
            raise FieldInvalid("quantities", "neural-entropy needs learned fields")


@dataclass
class LogDensitySection:
    variance: float = 1.0
    points: list[float] | None = None
    n_points: int = 20
    x_max: float = 3.0
    n_mc: int = 10_000

    def __post_init__(self):
        if not self.variance > 0:
            raise FieldInvalid("variance", "variance must be positive")
        if self.n_mc < 100:
            raise FieldInvalid("n_mc", "n_mc must be at least 100")
        if self.points is None and self.n_points < 2:
            raise FieldInvalid("n_points", "n_points must be >= 2")

    def grid(self) -> np.ndarray:
        if self.points is not None:
            return np.asarray(self.points, dtype=float)
        return np.linspace(-self.x_max, self.x_max, self.n_points)


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int = 0
    out_dir: str = "runs"
    reproducible: bool = True
    spec: SpecSection = field(default_factory=SpecSection)
    schedule: ScheduleSection = field(default_factory=ScheduleSection)
    data: DataSection = field(default_factory=DataSection)
    training: TrainingConfig = field(default_factory=TrainingConfig)
    estimator: EstimatorSection = field(default_factory=EstimatorSection)
    gaussian_entropy: GaussianEntropySection = field(default_factory=GaussianEntropySection)
    cfg_mi: CfgMiSection = field(default_factory=CfgMiSection)
    kelly: KellySection = field(default_factory=KellySection)
    train: TrainSection = field(default_factory=TrainSection)
    estimate: EstimateSection = field(default_factory=EstimateSection)
    logdensity: LogDensitySection = field(default_factory=LogDensitySection)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise FieldInvalid("experiment", f"experiment must be one of {EXPERIMENTS}")

    def to_dict(self) -> dict:
        return _to_plain(self)

    def dumps(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps())

    def stream_seed(self, name: str, *keys: int) -> int:
        return stream_seed(self.seed, name, *keys)


# -- seeds ------------------------------------------------------------------

def stream_seed(master: int, name: str, *keys: int) -> int:
    """Seed of the named child stream ``name`` (with optional integer sub-keys) of ``master``.

    Streams are independent of each other, so changing how many samples one
    stream draws never shifts another.
    """
    ss = np.random.SeedSequence(int(master), spawn_key=(zlib.crc32(name.encode()), *map(int, keys)))
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


# -- dict <-> dataclass -------------------------------------------------------

def _to_plain(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _to_plain(getattr(obj, f.name)) for f in dataclasses.fields(obj) if f.init}
    if isinstance(obj, (list, tuple)):
        return [_to_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _is_optional(tp) -> tuple[bool, Any]:
    args = typing.get_args(tp)
    origin = typing.get_origin(tp)
    if (origin is typing.Union or origin is types.UnionType) and type(None) in args:
        rest = [a for a in args if a is not type(None)]
        return True, rest[0]
    return False, tp


def _coerce(value, tp, path: str):
    optional, tp = _is_optional(tp)
    if value is None:
        if optional:
            return None
        raise ConfigError(path, "must not be null")
    if dataclasses.is_dataclass(tp):
        return _build(tp, value, path)
    origin = typing.get_origin(tp)
    if origin in (list, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(path, f"expected a list, got {type(value).__name__}")
        item_tp = typing.get_args(tp)[0]
        items = [_coerce(v, item_tp, f"{path}[{i}]") for i, v in enumerate(value)]
        return tuple(items) if origin is tuple else items
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    raise ConfigError(path, f"unsupported field type {tp}")


def _build(cls, data, path: str = ""):
    if not isinstance(data, dict):
        raise ConfigError(path, f"expected a mapping, got {type(data).__name__}")
    hints = typing.get_type_hints(cls)
    fields = {f.name: f for f in dataclasses.fields(cls) if f.init}
    for key in data:
        if key not in fields:
            raise ConfigError(_join(path, str(key)), "unknown field")
    kwargs = {}
    for name, f in fields.items():
        sub = _join(path, name)
        if name in data:
            kwargs[name] = _coerce(data[name], hints[name], sub)
        elif f.default is dataclasses.MISSING and f.default_factory is dataclasses.MISSING:
            raise ConfigError(sub, "required field missing")
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except FieldInvalid as exc:
        raise ConfigError(_join(path, exc.name), str(exc)) from exc
    except (ValueError, TypeError) as exc:
        raise ConfigError(path or cls.__name__, str(exc)) from exc


def _join(path: str, name: str) -> str:
    return f"{path}.{name}" if path else name


def config_from_dict(data: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, data)


def loads(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("", f"invalid YAML: {exc}") from exc
    if data is None:
        data = {}
    return config_from_dict(data)


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError("", f"cannot read {path}: {exc.strerror}") from exc
    return loads(text)
