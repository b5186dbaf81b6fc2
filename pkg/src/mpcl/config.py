"""Experiment configuration: dataclasses, named profiles, YAML I/O and dotted overrides."""
from __future__ import annotations

import copy
import dataclasses
import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable

import yaml

from .errors import ConfigError


@dataclass
class ModelConfig:
    dim: int = field(default=128, metadata={"help": "latent width D"})
    seq_len: int = field(default=4, metadata={"help": "encoder rows C per physiological modality"})
    hidden: int = field(default=0, metadata={"help": "encoder hidden width (0 means D)"})
    scales: tuple[float, ...] = field(default=(8.0, 14.3, 22.0),
                                      metadata={"help": "fusion inverse temperatures, increasing"})
    prototypes: int = field(default=100, metadata={"help": "prototype bank capacity M"})
    tau_dist: float = field(default=0.07, metadata={"help": "temperature of the prototype relation matrix"})
    beta_pcl: float = field(default=14.3, metadata={"help": "inverse temperature of batch retrieval"})
    tau_pcl_inv: float = field(default=50.0, metadata={"help": "inverse temperature of the leave-one-out loss"})
    blocks: int = field(default=10, metadata={"help": "number of compression blocks L"})
    heads: int = field(default=4, metadata={"help": "self-attention heads per compression block"})

    @property
    def hidden_width(self) -> int:
        return self.hidden or self.dim

    @property
    def beta_addr(self) -> float:
        return 1.0 / math.sqrt(self.dim)


@dataclass
class Ablation:
    msaf: bool = field(default=True, metadata={"help": "multi-scale associative fusion"})
    prd: bool = field(default=True, metadata={"help": "prototype relation distillation loss"})
    pcl: bool = field(default=True, metadata={"help": "co-occurrence retrieval + leave-one-out loss"})
    hsc: bool = field(default=True, metadata={"help": "hierarchical semantic compression blocks"})


@dataclass
class TrainConfig:
    lr: float = field(default=0.001, metadata={"help": "Adam learning rate"})
    batch_size: int = field(default=128, metadata={"help": "mini-batch size (>= 2)"})
    epochs: int = field(default=400, metadata={"help": "training epochs per fold"})
    adam_beta1: float = field(default=0.9, metadata={"help": "Adam first-moment decay"})
    adam_beta2: float = field(default=0.999, metadata={"help": "Adam second-moment decay"})
    adam_eps: float = field(default=1e-8, metadata={"help": "Adam denominator epsilon"})
    seed: int = field(default=0, metadata={"help": "master seed"})
    model: ModelConfig = field(default_factory=ModelConfig)
    ablate: Ablation = field(default_factory=Ablation)

    def validate(self) -> "TrainConfig":
        m = self.model
        if not (self.lr > 0 and self.batch_size >= 2 and self.epochs >= 1):
            raise ConfigError("lr must be > 0, batch_size >= 2, epochs >= 1")
        if m.dim < 1 or m.seq_len < 1 or m.prototypes < 1 or m.blocks < 1:
            raise ConfigError("dim, seq_len, prototypes and blocks must be >= 1")
        if m.dim % m.heads:
            raise ConfigError(f"dim {m.dim} not divisible by heads {m.heads}")
        if not m.scales or any(b <= 0 for b in m.scales) or list(m.scales) != sorted(set(m.scales)):
            raise ConfigError(f"scales must be positive and strictly increasing, got {m.scales}")
        if not (m.tau_dist > 0 and m.beta_pcl > 0 and m.tau_pcl_inv > 0):
            raise ConfigError("temperatures must be > 0")
        return self


PROFILES: dict[str, dict[str, Any]] = {
    "full": {},
    "desk": {"batch_size": 8, "epochs": 50, "model": {"dim": 32, "prototypes": 16, "blocks": 3}},
}


def to_dict(cfg) -> dict[str, Any]:
    out = {}
    for f in dataclasses.fields(cfg):
        v = getattr(cfg, f.name)
        if dataclasses.is_dataclass(v):
            v = to_dict(v)
        elif isinstance(v, tuple):
            v = list(v)
        out[f.name] = v
    return out


def _coerce(value: Any, default: Any, key: str) -> Any:
    try:
        if isinstance(default, bool):
            if isinstance(value, bool):
                return value
            if isinstance(value, str) and value.lower() in ("on", "off", "true", "false", "yes", "no"):
                return value.lower() in ("on", "true", "yes")
            raise ValueError(value)
        if isinstance(default, int):
            if isinstance(value, bool) or float(value) != int(value):
                raise ValueError(value)
            return int(value)
        if isinstance(default, float):
            return float(value)
        if isinstance(default, tuple):
            if isinstance(value, str):
                value = yaml.safe_load(value)
            if not isinstance(value, (list, tuple)):
                value = [value]
            return tuple(float(v) for v in value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return value


def _merge(cfg, data: dict[str, Any], prefix: str = "") -> None:
    if not isinstance(data, dict):
        raise ConfigError(f"expected a mapping at {prefix or '<root>'}")
    names = {f.name for f in dataclasses.fields(cfg)}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"unknown config key: {prefix}{key}")
        current = getattr(cfg, key)
        if dataclasses.is_dataclass(current):
            _merge(current, value, f"{prefix}{key}.")
        else:
            setattr(cfg, key, _coerce(value, current, prefix + key))


def from_dict(data: dict[str, Any] | None, profile: str = "full") -> TrainConfig:
    if profile not in PROFILES:
        raise ConfigError(f"unknown profile {profile!r}; choose from {sorted(PROFILES)}")
    cfg = TrainConfig()
    _merge(cfg, PROFILES[profile])
    if data:
        _merge(cfg, data)
    return cfg.validate()


def load_config(path: str | Path | None, profile: str = "full") -> TrainConfig:
    data = None
    if path is not None:
        try:
            data = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return from_dict(data, profile)


def apply_overrides(cfg: TrainConfig, overrides: Iterable[str]) -> TrainConfig:
    """Return a copy with ``dotted.key=value`` strings applied; unknown keys raise :class:`ConfigError`."""
    cfg = copy.deepcopy(cfg)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must look like key=value, got {item!r}")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        value: Any = raw.strip()
        for part in reversed(parts):
            value = {part: value}
        _merge(cfg, value)
    return cfg.validate()


def dump_config(cfg: TrainConfig) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def config_hash(cfg: TrainConfig, *extra: str) -> str:
    h = hashlib.sha256(dump_config(cfg).encode())
    for e in extra:
        h.update(b"\0" + e.encode())
    return h.hexdigest()[:12]


def describe_keys() -> list[str]:
    """One line per config key with its full and desk defaults."""
    full, desk = to_dict(from_dict(None, "full")), to_dict(from_dict(None, "desk"))
    lines = []

    def walk(cls, p, d, prefix):
        for f in dataclasses.fields(cls):
            key = prefix + f.name
            if isinstance(p[f.name], dict):
                walk(f.default_factory, p[f.name], d[f.name], key + ".")
                continue
            extra = "" if p[f.name] == d[f.name] else f", desk {d[f.name]}"
            lines.append(f"  {key:<20} {f.metadata.get('help', '')} (full {p[f.name]}{extra})")

    walk(TrainConfig, full, desk, "")
    return lines
