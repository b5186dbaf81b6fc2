"""Modality encoders and multi-scale associative fusion of physiological signals."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .hopfield import hopfield_op
from .numeric import Tensor, add, as_tensor, concat, matmul, reshape, tanh

ROLES = ("primary", "auxiliary", "behavioral")


@dataclass(frozen=True)
class ModalityConfig:
    name: str
    raw_dim: int
    channels: int = 1
    role: str = "auxiliary"

    def __post_init__(self):
        if self.raw_dim < 1:
            raise ConfigError(f"modality {self.name}: raw_dim must be >= 1")
        if self.role not in ROLES:
            raise ConfigError(f"modality {self.name}: role must be one of {ROLES}")


def check_roles(modalities: Sequence[ModalityConfig]) -> None:
    roles = [m.role for m in modalities]
    if roles.count("primary") != 1 or roles.count("behavioral") != 1 or roles.count("auxiliary") < 1:
        raise ConfigError("need exactly one primary, one behavioral and at least one auxiliary modality")
    names = [m.name for m in modalities]
    if len(set(names)) != len(names):
        raise ConfigError(f"duplicate modality names: {names}")


@dataclass
class EncoderParams:
    """affine -> tanh -> affine; ``w2`` has ``rows * D`` output columns."""
    w1: Tensor | np.ndarray
    b1: Tensor | np.ndarray
    w2: Tensor | np.ndarray
    b2: Tensor | np.ndarray

    @classmethod
    def init(cls, raw_dim: int, hidden: int, rows: int, dim: int, rng: np.random.Generator):
        a1, a2 = 1.0 / np.sqrt(raw_dim), 1.0 / np.sqrt(hidden)
        return cls(rng.uniform(-a1, a1, (raw_dim, hidden)), np.zeros(hidden),
                   rng.uniform(-a2, a2, (hidden, rows * dim)), np.zeros(rows * dim))


def encode(x, cfg: ModalityConfig, params: EncoderParams, dim: int) -> Tensor:
    """Map a raw vector (or a batch of them) to a ``[rows x dim]`` embedding."""
    x = as_tensor(x)
    if x.shape[-1] != cfg.raw_dim:
        raise DimensionError(f"{cfg.name}: expected {cfg.raw_dim} features, got {x.shape[-1]}")
    single = x.ndim == 1
    if single:
        x = reshape(x, (1, cfg.raw_dim))
    h = tanh(add(matmul(x, params.w1), params.b1))
    out = add(matmul(h, params.w2), params.b2)
    width = out.shape[-1]
    if width % dim:
        raise DimensionError(f"{cfg.name}: encoder width {width} not a multiple of {dim}")
    shape = (width // dim, dim) if single else (x.shape[0], width // dim, dim)
    return reshape(out, shape)


def fuse_scale(h_pri, h_m, beta: float) -> Tensor:
    """Primary rows query the auxiliary rows at one inverse temperature."""
    h_pri, h_m = as_tensor(h_pri), as_tensor(h_m)
    if h_pri.shape[-1] != h_m.shape[-1]:
        raise DimensionError(f"fuse_scale width mismatch {h_pri.shape} vs {h_m.shape}")
    return hopfield_op(h_pri, h_m, h_m, beta)


def fuse_modality(h_pri, h_m, scales: Sequence[float], w_proj) -> Tensor:
    h_pri, w_proj = as_tensor(h_pri), as_tensor(w_proj)
    d = h_pri.shape[-1]
    if w_proj.shape != (len(scales) * d, d):
        raise DimensionError(f"w_proj must be {(len(scales) * d, d)}, got {w_proj.shape}")
    cat = concat([fuse_scale(h_pri, h_m, b) for b in scales], axis=-1)
    return add(h_pri, matmul(cat, w_proj))


def fuse_all(h_pri, aux: Sequence, scales: Sequence[float], projections: Sequence) -> Tensor:
    """Row-stack the fused matrix of every auxiliary modality, in the given order."""
    if not aux:
        raise ConfigError("at least one auxiliary modality is required")
    if len(aux) != len(projections):
        raise ConfigError("one projection per auxiliary modality")
    return concat([fuse_modality(h_pri, h, scales, w) for h, w in zip(aux, projections)], axis=-2)


def stack_unfused(h_pri, aux: Sequence) -> Tensor:
    """Ablation path: plain row concatenation of the encoder outputs."""
    return concat([h_pri, *aux], axis=-2)
