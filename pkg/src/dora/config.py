"""Run configuration and the flat ``key = value`` config file format.

Keys are the field names of :class:`TransformerConfig`, :class:`TaskConfig`
and :class:`TrainConfig`; ``#`` starts a comment. ``none`` (or ``auto``)
selects the derived default for optional fields.
"""

from __future__ import annotations

import dataclasses
import math
import typing
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .layers import LayerId
from .model import TransformerConfig
from .schedule import BudgetSchedule, ScheduleMode


@dataclass
class TaskConfig:
    task: str = "teacher"  # teacher | classification
    n_train: int = 512
    n_valid: int = 256
    hot_site: str = "1:query"
    hot_rank: int = 6
    base_rank: int = 1
    teacher_magnitude: float = 1.0
    n_classes: int = 2
    difficulty: float = 0.0
    margin: float = 1.0

    def __post_init__(self):
        if self.task not in ("teacher", "classification"):
            raise ConfigError("task", f"unknown task {self.task!r}")
        if self.n_train < 1:
            raise ConfigError("n_train", "must be >= 1")
        try:
            LayerId.parse(self.hot_site)
        except (ValueError, KeyError):
            raise ConfigError("hot_site", f"expected '<layer>:<kind>', got {self.hot_site!r}") from None


@dataclass
class TrainConfig:
    gamma: float = 0.01
    eta: float = 0.3
    beta: float = 0.9
    T: int = 2000
    bT: float = 2.0
    b0: float | None = None
    t_i: int | None = None
    t_f: int | None = None
    prune_interval: int = 10
    batch_size: int = 32
    seed: int = 0
    schedule_mode: str = "canonical"
    optimizer: str = "adam"
    adapter: str = "dora"  # dora | lora
    lora_rank: int | None = None

    def __post_init__(self):
        if not self.gamma > 0:
            raise ConfigError("gamma", f"learning rate must be > 0, got {self.gamma}")
        if not 0.0 <= self.beta < 1.0:
            raise ConfigError("beta", f"smoothing factor must lie in [0, 1), got {self.beta}")
        if not self.eta >= 0:
            raise ConfigError("eta", f"must be >= 0, got {self.eta}")
        if self.T < 1:
            raise ConfigError("T", "must be >= 1")
        if self.prune_interval < 1:
            raise ConfigError("prune_interval", "must be >= 1")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer", f"unknown optimizer {self.optimizer!r}")
        if self.adapter not in ("dora", "lora"):
            raise ConfigError("adapter", f"unknown adapter {self.adapter!r}")
        try:
            ScheduleMode(self.schedule_mode)
        except ValueError:
            raise ConfigError("schedule_mode", f"expected canonical|literal, got {self.schedule_mode!r}") from None
        self.schedule()  # validates budget/plateau fields

    def schedule(self) -> BudgetSchedule:
        return BudgetSchedule.with_defaults(self.T, self.bT, self.b0, self.t_i, self.t_f,
                                            ScheduleMode(self.schedule_mode))

    @property
    def components_per_site(self) -> int:
        return math.ceil(self.schedule().b0 - 1e-9)

    @property
    def uniform_rank(self) -> int:
        return int(self.lora_rank if self.lora_rank is not None else round(self.bT))


@dataclass
class RunConfig:
    model: TransformerConfig = field(default_factory=TransformerConfig)
    task: TaskConfig = field(default_factory=TaskConfig)
    train: TrainConfig = field(default_factory=TrainConfig)

    def replace(self, **changes) -> "RunConfig":
        """Copy with flat-key overrides, re-validated."""
        flat = to_flat(self)
        for key, value in changes.items():
            if key not in flat:
                raise ConfigError(key, "unknown config key")
            flat[key] = value
        return from_flat(flat)


_SECTIONS = {"model": TransformerConfig, "task": TaskConfig, "train": TrainConfig}


def _fields(cls) -> dict[str, type]:
    hints = typing.get_type_hints(cls)
    return {f.name: hints[f.name] for f in dataclasses.fields(cls)}


def _key_owner() -> dict[str, str]:
    owner = {}
    for section, cls in _SECTIONS.items():
        for name in _fields(cls):
            owner[name] = section
    return owner


def _convert(key: str, raw: str, typ) -> object:
    optional = type(None) in typing.get_args(typ)
    if optional:
        if raw.lower() in ("none", "auto", ""):
            return None
        typ = next(t for t in typing.get_args(typ) if t is not type(None))
    try:
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is bool:
            return raw.lower() in ("1", "true", "yes")
        return raw
    except ValueError:
        raise ConfigError(key, f"cannot parse {raw!r} as {typ.__name__}") from None


def to_flat(cfg: RunConfig) -> dict[str, object]:
    flat = {}
    for section in _SECTIONS:
        flat.update(dataclasses.asdict(getattr(cfg, section)))
    return flat


def from_flat(flat: dict[str, object]) -> RunConfig:
    owner = _key_owner()
    parts: dict[str, dict] = {s: {} for s in _SECTIONS}
    for key, value in flat.items():
        if key not in owner:
            raise ConfigError(key, "unknown config key")
        parts[owner[key]][key] = value
    try:
        return RunConfig(**{s: _SECTIONS[s](**kw) for s, kw in parts.items()})
    except TypeError as exc:
        raise ConfigError("config", str(exc)) from None


def parse_config(text: str) -> RunConfig:
    owner = _key_owner()
    types = {k: t for cls in _SECTIONS.values() for k, t in _fields(cls).items()}
    flat: dict[str, object] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected 'key = value', got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in owner:
            raise ConfigError(key, "unknown config key")
        if key in flat:
            raise ConfigError(key, "duplicate key")
        flat[key] = _convert(key, raw, types[key])
    return from_flat(flat)


def serialize_config(cfg: RunConfig) -> str:
    lines = []
    for section in _SECTIONS:
        lines.append(f"# {section}")
        for key, value in dataclasses.asdict(getattr(cfg, section)).items():
            lines.append(f"{key} = {'none' if value is None else value}")
    return "\n".join(lines) + "\n"


def load_config(path: str | Path) -> RunConfig:
    return parse_config(Path(path).read_text())
