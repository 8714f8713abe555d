"""Run configuration: nested ``data/model/train/eval/report`` sections in YAML.

Every key is optional; missing keys take the library defaults and unknown
keys are rejected. Resolution order is command-line flags, then the file,
then defaults. A single root ``seed`` drives all randomness: training derives
its per-purpose streams from it and dataset generation uses
``derive_seed(seed, "generation")``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
import re
from pathlib import Path

import yaml

from .data import BenchmarkConfig, ShiftConfig
from .errors import FormatError, ValidationError
from .model import NetworkSpec
from .training import METHODS, TrainConfig, derive_seed

__all__ = [
    "DataSection",
    "EvalSection",
    "ReportSection",
    "RunConfig",
    "load_config",
    "resolve_config",
]


class _Loader(yaml.SafeLoader):
    """Safe loader that also reads exponent floats without a dot (``1e-3``) as numbers."""


_Loader.add_implicit_resolver(
    "tag:yaml.org,2002:float",
    re.compile(r"""^[-+]?(?:[0-9][0-9_]*\.[0-9_]*(?:[eE][-+]?[0-9]+)?|\.[0-9_]+(?:[eE][-+]?[0-9]+)?
                |[0-9][0-9_]*[eE][-+]?[0-9]+|\.(?:inf|Inf|INF)|[-+]\.(?:inf|Inf|INF)|\.(?:nan|NaN|NAN))$""", re.X),
    list("-+0123456789."),
)


def _as_tuples(v):
    if isinstance(v, list):
        return tuple(_as_tuples(x) for x in v)
    return v


def _as_lists(v):
    if isinstance(v, (tuple, list)):
        return [_as_lists(x) for x in v]
    if isinstance(v, dict):
        return {k: _as_lists(x) for k, x in v.items()}
    return v


def _build(cls, d, section: str):
    if d is None:
        d = {}
    if not isinstance(d, dict):
        raise ValidationError(f"[{section}] must be a mapping, got {type(d).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - known)
    if unknown:
        raise ValidationError(f"unknown keys in [{section}]: {unknown}")
    try:
        return cls(**{k: _as_tuples(v) for k, v in d.items()})
    except TypeError as exc:
        raise ValidationError(f"[{section}]: {exc}") from exc


@dataclass
class DataSection:
    n_source: int = 3000
    n_target: int = 1500
    signal_length: int = 1024
    shift: ShiftConfig = field(default_factory=ShiftConfig)
    benchmark: BenchmarkConfig = field(default_factory=BenchmarkConfig)

    @classmethod
    def from_dict(cls, d) -> "DataSection":
        d = dict(d or {})
        shift = _build(ShiftConfig, d.pop("shift", None), "data.shift")
        bench = _build(BenchmarkConfig, d.pop("benchmark", None), "data.benchmark")
        out = _build(cls, d, "data")
        out.shift, out.benchmark = shift, bench
        return out


@dataclass
class EvalSection:
    methods: tuple[str, ...] = tuple(METHODS)
    n_runs: int = 5
    n_seeds: int = 20

    def __post_init__(self):
        self.methods = tuple(self.methods)
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ValidationError(f"unknown methods {unknown}; choose from {list(METHODS)}")
        if self.n_runs < 1 or self.n_seeds < 2:
            raise ValidationError("eval.n_runs must be >= 1 and eval.n_seeds >= 2")


@dataclass
class ReportSection:
    plots: bool = False
    image_format: str = "png"


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    model: NetworkSpec = field(default_factory=NetworkSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalSection = field(default_factory=EvalSection)
    report: ReportSection = field(default_factory=ReportSection)

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        d = dict(d or {})
        unknown = sorted(set(d) - {f.name for f in fields(cls)})
        if unknown:
            raise ValidationError(f"unknown top-level config keys: {unknown}")
        train = dict(d.get("train") or {})
        if "seed" in train:
            raise ValidationError("set the root 'seed' at top level; train.seed is derived from it")
        seed = int(d.get("seed", 0))
        return cls(
            seed=seed,
            data=DataSection.from_dict(d.get("data")),
            model=_build(NetworkSpec, d.get("model"), "model"),
            train=_build(TrainConfig, {**train, "seed": seed}, "train"),
            eval=_build(EvalSection, d.get("eval"), "eval"),
            report=_build(ReportSection, d.get("report"), "report"),
        )

    def to_dict(self) -> dict:
        train = self.train.to_dict()
        train.pop("seed")
        return _as_lists({
            "seed": self.seed,
            "data": {
                "n_source": self.data.n_source,
                "n_target": self.data.n_target,
                "signal_length": self.data.signal_length,
                "shift": asdict(self.data.shift),
                "benchmark": asdict(self.data.benchmark),
            },
            "model": self.model.to_dict(),
            "train": train,
            "eval": asdict(self.eval),
            "report": asdict(self.report),
        })

    @property
    def generation_seed(self) -> int:
        return derive_seed(self.seed, "generation")


def load_config(path) -> dict:
    """Raw mapping from a YAML config file, or the ``config`` entry of a run manifest."""
    path = Path(path)
    if not path.is_file():
        raise ValidationError(f"config file not found: {path}")
    try:
        raw = yaml.load(path.read_text(), Loader=_Loader)
    except yaml.YAMLError as exc:
        raise FormatError(f"{path}: not valid YAML ({exc})") from exc
    if raw is None:
        return {}
    if not isinstance(raw, dict):
        raise ValidationError(f"{path}: top level must be a mapping")
    if "config" in raw and "code_version" in raw:
        return raw["config"]
    return raw


def _set_path(d: dict, dotted: str, value):
    keys = dotted.split(".")
    for k in keys[:-1]:
        d = d.setdefault(k, {})
    d[keys[-1]] = value


def resolve_config(path=None, overrides: dict | None = None) -> RunConfig:
    """Defaults, updated by the file at ``path``, updated by dotted-key ``overrides``.

    Override values of ``None`` are ignored so unset command-line flags fall through.
    """
    raw = load_config(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is not None:
            _set_path(raw, key, value)
    return RunConfig.from_dict(raw)
