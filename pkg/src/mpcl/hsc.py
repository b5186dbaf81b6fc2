"""Hierarchical semantic compression blocks and the distribution head."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import ConfigError, DimensionError
from .hopfield import hopfield_op
from .numeric import Tensor, add, as_tensor, concat, matmul, mean, reshape, scale, softmax_rows, sum_, transpose


@dataclass(frozen=True)
class SlotSchedule:
    capacities: tuple[int, ...]

    def __post_init__(self):
        caps = tuple(int(c) for c in self.capacities)
        if not caps or min(caps) < 1:
            raise ConfigError(f"slot capacities must be positive, got {caps}")
        if any(b > a for a, b in zip(caps, caps[1:])):
            raise ConfigError(f"slot capacities must be non-increasing, got {caps}")
        object.__setattr__(self, "capacities", caps)

    @classmethod
    def geometric(cls, m: int, e: int, blocks: int) -> "SlotSchedule":
        """Geometric decay from ``m`` slots to ``e`` slots over ``blocks`` layers."""
        if blocks < 1 or e > m:
            raise ConfigError(f"cannot shrink {m} slots to {e} over {blocks} blocks")
        if blocks == 1:
            if m != e:
                raise ConfigError(f"a single block needs m == e, got m={m}, e={e}")
            return cls((m,))
        ratio = e / m
        caps = [int(round(m * ratio ** (i / (blocks - 1)))) for i in range(blocks)]
        caps[0], caps[-1] = m, e
        for i in range(1, blocks):
            caps[i] = min(caps[i], caps[i - 1])
        return cls(tuple(caps))


@dataclass
class CompressionBlock:
    lookup: Tensor | np.ndarray   # [M_l x D]
    content: Tensor | np.ndarray  # [M_l x D]
    wq: Tensor | np.ndarray       # [h x D x D/h]
    wk: Tensor | np.ndarray
    wv: Tensor | np.ndarray
    wo: Tensor | np.ndarray       # [h x D/h x D]

    @property
    def heads(self) -> int:
        return as_tensor(self.wq).shape[0]


@dataclass
class ClassifierHead:
    w: Tensor | np.ndarray  # [D x E]
    b: Tensor | np.ndarray  # [E]


def hsc_init(bank_memory, schedule: SlotSchedule, heads: int, rng: np.random.Generator) -> list[CompressionBlock]:
    """Block 1's content slots copy the prototype memory; everything else is random."""
    mem = np.array(as_tensor(bank_memory).data)
    m, d = mem.shape
    if schedule.capacities[0] != m:
        raise ConfigError(f"first slot capacity {schedule.capacities[0]} != bank size {m}")
    if d % heads:
        raise ConfigError(f"width {d} not divisible by {heads} heads")
    dh, lim = d // heads, 1.0 / math.sqrt(d)
    blocks = []
    for i, cap in enumerate(schedule.capacities):
        lookup = rng.uniform(-lim, lim, (cap, d))
        content = mem.copy() if i == 0 else rng.uniform(-lim, lim, (cap, d))
        wq, wk, wv = (rng.uniform(-lim, lim, (heads, d, dh)) for _ in range(3))
        wo = rng.uniform(-lim, lim, (heads, dh, d))
        blocks.append(CompressionBlock(lookup, content, wq, wk, wv, wo))
    return blocks


def mhsa(x, block: CompressionBlock) -> Tensor:
    """Scaled dot-product self-attention over the rows of ``x``; heads summed after output projection."""
    x = as_tensor(x)
    dh = as_tensor(block.wq).shape[-1]
    x4 = reshape(x, x.shape[:-2] + (1,) + x.shape[-2:])
    q, k, v = (matmul(x4, w) for w in (block.wq, block.wk, block.wv))
    att = softmax_rows(scale(matmul(q, transpose(k)), 1.0 / math.sqrt(dh)))
    return sum_(matmul(matmul(att, v), block.wo), axis=-3)


def block_forward(h, block: CompressionBlock, beta: float) -> Tensor:
    h = as_tensor(h)
    if h.shape[-1] != as_tensor(block.lookup).shape[-1]:
        raise DimensionError(f"block width {as_tensor(block.lookup).shape[-1]} != input width {h.shape[-1]}")
    h_tilde = add(hopfield_op(h, block.lookup, block.content, beta), h)
    return add(mhsa(h_tilde, block), h_tilde)


def hsc_forward(z_tilde_phy, z_tilde_beha, blocks: Sequence[CompressionBlock], beta: float) -> Tensor:
    """Row-concatenate both modalities, then run the blocks in order."""
    z_tilde_phy, z_tilde_beha = as_tensor(z_tilde_phy), as_tensor(z_tilde_beha)
    if z_tilde_phy.shape[-1] != z_tilde_beha.shape[-1]:
        raise DimensionError(f"hsc inputs {z_tilde_phy.shape} and {z_tilde_beha.shape} differ in width")
    h = concat([z_tilde_phy, z_tilde_beha], axis=-2)
    for block in blocks:
        h = block_forward(h, block, beta)
    return h


def head_logits(h_final, head: ClassifierHead) -> Tensor:
    return add(matmul(mean(h_final, axis=-2, keepdims=True), head.w), head.b)


def predict(h_final, head: ClassifierHead) -> Tensor:
    """Mean-pool the rows, apply the affine head, softmax onto the simplex."""
    logits = head_logits(h_final, head)
    return reshape(softmax_rows(logits), logits.shape[:-2] + logits.shape[-1:])
