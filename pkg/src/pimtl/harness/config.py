"""Experiment configuration.

Files are flat ``key = value`` lines; nested sections use dotted prefixes::

    experiment = portfolio
    seed = 3
    trainer.learning_rate = 0.5
    synthetic.n_grid = 20, 50, 100

Blank lines and ``#`` comments are ignored. Tuples are comma-separated.
Every key can also be given on the command line as ``--section.field``.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path

from ..envs.prices import PriceRegime
from ..errors import ConfigError
from ..trainer import TrainerConfig

EXPERIMENTS = ("synthetic-bound", "portfolio")


@dataclass
class SamplerConfig:
    priority_exponent: float = 0.5
    is_exponent: float = 1.0
    smoothing: float = 0.2


@dataclass
class PolicyConfig:
    hidden_size: int = 25
    init_scale: float = 0.01
    # fixed input transform (ratio - offset) * scale
    input_offset: float = 1.0
    input_scale: float = 50.0


@dataclass
class SyntheticBoundConfig:
    m: int = 10
    n_grid: tuple[int, ...] = (20, 50, 100, 200, 500, 1000, 2000)
    curve_epsilons: tuple[float, ...] = (0.0, 0.8)
    gap_epsilons: tuple[float, ...] = (0.0, 0.2, 0.4, 0.6, 0.8)
    gap_n: int = 2000
    n_real_augmented: int = 20
    heldout_states: int = 10000
    n_actions: int = 64
    action_seed: int = 0
    discount: float = 0.0
    lspi_iterations: int = 10
    noise_std: float = 0.05
    beta_center: float = 0.5
    features: str = "entity"  # or "pooled"


@dataclass
class PortfolioRunConfig:
    data: str = ""  # price CSV; empty -> generate
    n_periods: int = 1000
    universe: int = 50
    held_out: int = 18
    task_size: int = 10
    window: int = 30
    commission_rate: float = 0.0025
    test_fraction: float = 0.2
    task_counts: tuple[int, ...] = (5, 30)
    conditions: tuple[str, ...] = ("STL", "MTL-uniform", "P-MTL")
    eval_tasks: int = 5
    oos_tasks: int = 10
    steps_per_task: int = 300
    epochs: int = 5
    scorer: str = "max"


@dataclass
class ExperimentConfig:
    experiment: str = "portfolio"
    seed: int = 0
    seeds: int = 10
    out: str = "runs/latest"
    workers: int = 1
    synthetic: SyntheticBoundConfig = field(default_factory=SyntheticBoundConfig)
    portfolio: PortfolioRunConfig = field(default_factory=PortfolioRunConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    prices: PriceRegime = field(default_factory=PriceRegime)

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}, got {self.experiment!r}")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")


def _hints(cls) -> dict[str, typing.Any]:
    return typing.get_type_hints(cls)


def _is_section(tp) -> bool:
    return isinstance(tp, type) and dataclasses.is_dataclass(tp)


def flat_fields(cfg=None, prefix: str = "") -> dict[str, typing.Any]:
    """``{dotted key: type}`` for every leaf field."""
    cls = type(cfg) if cfg is not None else ExperimentConfig
    out = {}
    for name, tp in _hints(cls).items():
        if _is_section(tp):
            out.update(flat_fields(tp(), f"{prefix}{name}."))
        else:
            out[f"{prefix}{name}"] = tp
    return out


def parse_value(key: str, text: str, tp):
    text = text.strip()
    try:
        if tp is bool:
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(text)
        if tp in (int, float, str):
            return tp(text)
        origin = typing.get_origin(tp)
        if origin is tuple:
            (elem, *_rest) = typing.get_args(tp)
            parts = [p for p in (s.strip() for s in text.split(",")) if p]
            return tuple(elem(p) for p in parts)
    except ValueError:
        raise ConfigError(f"bad value for {key}: {text!r}") from None
    raise ConfigError(f"unsupported type for {key}: {tp}")


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(format_value(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def set_key(cfg: ExperimentConfig, key: str, value) -> None:
    fields_ = flat_fields(cfg)
    if key not in fields_:
        raise ConfigError(f"unknown config key {key!r}")
    if isinstance(value, str):
        value = parse_value(key, value, fields_[key])
    *path, leaf = key.split(".")
    target = cfg
    for part in path:
        target = getattr(target, part)
    if dataclasses.is_dataclass(target) and getattr(type(target), "__dataclass_params__").frozen:
        # frozen sections (PriceRegime) are replaced wholesale
        new = dataclasses.replace(target, **{leaf: value})
        parent = cfg
        for part in path[:-1]:
            parent = getattr(parent, part)
        setattr(parent, path[-1], new)
    else:
        setattr(target, leaf, value)


def get_key(cfg: ExperimentConfig, key: str):
    target = cfg
    for part in key.split("."):
        target = getattr(target, part)
    return target


def parse_text(text: str, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    cfg = cfg or ExperimentConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {raw!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        set_key(cfg, key, value)
    return cfg


def load_config(path, cfg: ExperimentConfig | None = None) -> ExperimentConfig:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_text(text, cfg)


def dump_config(cfg: ExperimentConfig) -> str:
    return "".join(f"{key} = {format_value(get_key(cfg, key))}\n" for key in flat_fields(cfg))
