"""Run configuration: dataclasses plus a flat ``key = value`` file format.

Lines are ``key = value`` with ``#`` comments; unknown keys are rejected.
Every CLI run writes back its resolved configuration so the run is
reproducible from that copy alone.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Optional

from .data import SyntheticDatasetSpec
from .errors import ConfigError


@dataclass(frozen=True)
class TrainConfig:
    alpha: float = 0.1
    beta: float = 0.05
    epochs: int = 60
    steps_per_epoch: int = 50
    batch_size: int = 64
    lr_q: float = 0.1
    momentum: float = 0.9
    weight_decay: float = 5e-4
    lr_g: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    lr_decay: float = 0.1
    decay_epochs: int = 25
    noise_dim: int = 100
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ConfigError(f"alpha/beta must be non-negative, got {self.alpha}, {self.beta}")
        if self.epochs < 0:
            raise ConfigError(f"epochs must be non-negative, got {self.epochs}")
        for name in ("steps_per_epoch", "batch_size", "decay_epochs", "noise_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("lr_q", "lr_g"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if not 0 < self.lr_decay <= 1:
            raise ConfigError(f"lr_decay must be in (0,1], got {self.lr_decay}")


@dataclass(frozen=True)
class RunConfig:
    train: TrainConfig = field(default_factory=TrainConfig)
    data: SyntheticDatasetSpec = field(default_factory=SyntheticDatasetSpec)
    weight_bits: int = 3
    activation_bits: int = 3
    tap_layers: Optional[tuple[int, ...]] = None
    disable_df: bool = False
    disable_la: bool = False
    gram_mode: bool = False
    teacher_epochs: int = 30
    teacher_lr: float = 0.05
    ft_epochs: int = 30
    out_dir: str = ""


# config-file key -> (section, field name, parser); "data.seed" is exposed
# as data_seed so the flat namespace stays collision-free
def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_taps(s: str) -> Optional[tuple[int, ...]]:
    s = s.strip()
    if not s or s.lower() == "none":
        return None
    return tuple(int(part) for part in s.split(","))


_TRAIN_KEYS = {f.name: f.type for f in fields(TrainConfig)}
_DATA_KEYS = {"num_classes": int, "train_samples": int, "test_samples": int,
              "sigma": float, "data_seed": int}
_TOP_KEYS = {"weight_bits": int, "activation_bits": int, "tap_layers": _parse_taps,
             "disable_df": _parse_bool, "disable_la": _parse_bool, "gram_mode": _parse_bool,
             "teacher_epochs": int, "teacher_lr": float, "ft_epochs": int, "out_dir": str}

_CASTS = {"int": int, "float": float, "str": str}


def _cast_train(name: str, raw: str):
    typ = _TRAIN_KEYS[name]
    typ_name = typ if isinstance(typ, str) else typ.__name__
    return _CASTS[typ_name](raw)


def parse_config_text(text: str, base: Optional[RunConfig] = None) -> RunConfig:
    cfg = base if base is not None else RunConfig()
    train_kwargs = {f.name: getattr(cfg.train, f.name) for f in fields(TrainConfig)}
    data_kwargs = {f.name: getattr(cfg.data, f.name) for f in fields(SyntheticDatasetSpec)}
    top_kwargs = {name: getattr(cfg, name) for name in _TOP_KEYS}

    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw_line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        try:
            if key in _TRAIN_KEYS:
                train_kwargs[key] = _cast_train(key, raw)
            elif key in _DATA_KEYS:
                target = "seed" if key == "data_seed" else key
                data_kwargs[target] = _DATA_KEYS[key](raw)
            elif key in _TOP_KEYS:
                top_kwargs[key] = _TOP_KEYS[key](raw)
            else:
                raise ConfigError(f"line {lineno}: unknown config key {key!r}")
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from exc
    return RunConfig(train=TrainConfig(**train_kwargs),
                     data=SyntheticDatasetSpec(**data_kwargs), **top_kwargs)


def load_config(path, base: Optional[RunConfig] = None) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise IOError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, base)


def config_text(cfg: RunConfig) -> str:
    lines = ["# resolved run configuration"]
    for f in fields(TrainConfig):
        lines.append(f"{f.name} = {getattr(cfg.train, f.name)}")
    for key in _DATA_KEYS:
        src = "seed" if key == "data_seed" else key
        lines.append(f"{key} = {getattr(cfg.data, src)}")
    for key in _TOP_KEYS:
        value = getattr(cfg, key)
        if key == "tap_layers":
            value = "none" if value is None else ",".join(str(v) for v in value)
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"


def write_resolved(cfg: RunConfig, out_dir) -> Path:
    out = Path(out_dir) / "config_resolved.txt"
    out.write_text(config_text(cfg))
    return out
