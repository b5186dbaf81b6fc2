"""Prototype memory banks and cross-modal prototype relation distillation."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, ParameterError
from .numeric import Tensor, add, as_tensor, kl_div, log, matmul, mean, scale, softmax_rows, transpose

KL_FLOOR = 1e-12


@dataclass
class PrototypeBank:
    address: Tensor | np.ndarray
    memory: Tensor | np.ndarray
    beta_addr: float | None = None

    def __post_init__(self):
        a, m = as_tensor(self.address), as_tensor(self.memory)
        if a.shape != m.shape or a.ndim != 2:
            raise DimensionError(f"address {a.shape} and memory {m.shape} must share [M x D]")
        if self.beta_addr is None:
            self.beta_addr = 1.0 / math.sqrt(a.shape[1])
        if not self.beta_addr > 0:
            raise ParameterError("beta_addr must be > 0")

    @property
    def m(self) -> int:
        return as_tensor(self.address).shape[0]

    @classmethod
    def init(cls, m: int, dim: int, rng: np.random.Generator) -> "PrototypeBank":
        lim = 1.0 / math.sqrt(dim)
        return cls(rng.uniform(-lim, lim, (m, dim)), rng.uniform(-lim, lim, (m, dim)))


@dataclass
class AddressingResult:
    a: Tensor
    z_proto: Tensor


def address(z, bank: PrototypeBank) -> AddressingResult:
    z, addr = as_tensor(z), as_tensor(bank.address)
    if z.shape[-1] != addr.shape[1]:
        raise DimensionError(f"embedding width {z.shape[-1]} != bank width {addr.shape[1]}")
    a = softmax_rows(matmul(z, transpose(addr)), bank.beta_addr)
    return AddressingResult(a, matmul(a, bank.memory))


def semantic_correlation(bank: PrototypeBank, tau_dist: float = 0.07) -> Tensor:
    """Row-softmax of ``memory @ address^T / tau_dist``: each prototype's relation to the bank."""
    if not tau_dist > 0:
        raise ParameterError(f"tau_dist must be > 0, got {tau_dist}")
    return softmax_rows(matmul(bank.memory, transpose(bank.address)), 1.0 / tau_dist)


def pseudo_labels(a) -> np.ndarray | int:
    """Index of the largest K-pooled addressing weight (lowest index on ties)."""
    data = np.asarray(as_tensor(a).data)
    if data.size == 0:
        raise DimensionError("pseudo_labels of an empty addressing matrix")
    idx = np.argmax(data.mean(axis=-2), axis=-1)
    return int(idx) if data.ndim == 2 else idx


def _check_simplex(x: np.ndarray, what: str, tol: float = 1e-6) -> None:
    if np.any(x < 0) or not np.allclose(x.sum(axis=-1), 1.0, atol=tol):
        raise ContractError(f"{what} rows must be probability distributions")


def prd_teachers(a_phy, a_beha, s_phy, s_beha) -> tuple[np.ndarray, np.ndarray]:
    """Gradient-free teacher rows: ``s_beha`` at the behavioral pseudo-label (for the
    physiological student) and ``s_phy`` at the physiological pseudo-label."""
    s_phy, s_beha = as_tensor(s_phy).data, as_tensor(s_beha).data
    p_star, q_star = pseudo_labels(a_beha), pseudo_labels(a_phy)
    return np.array(s_beha[p_star]), np.array(s_phy[q_star])


def prd_loss(a_phy, a_beha, s_phy, s_beha, teachers=None) -> Tensor:
    """Symmetric KL between teacher relation rows and K-pooled student addressing.

    Inputs may carry a leading batch axis; the result is averaged over it.
    ``teachers`` overrides the pair returned by :func:`prd_teachers`.
    """
    a_phy, a_beha = as_tensor(a_phy), as_tensor(a_beha)
    if a_phy.shape[-1] != a_beha.shape[-1] or as_tensor(s_phy).shape[-1] != a_phy.shape[-1]:
        raise DimensionError("prd_loss: prototype counts differ")
    for x, what in ((a_phy.data, "a_phy"), (a_beha.data, "a_beha"),
                    (as_tensor(s_phy).data, "s_phy"), (as_tensor(s_beha).data, "s_beha")):
        _check_simplex(x, what)
    t_phy, t_beha = teachers if teachers is not None else prd_teachers(a_phy, a_beha, s_phy, s_beha)
    kl_phy = kl_div(t_phy, log(mean(a_phy, axis=-2), KL_FLOOR))
    kl_beha = kl_div(t_beha, log(mean(a_beha, axis=-2), KL_FLOOR))
    return scale(mean(add(kl_phy, kl_beha)), 0.5)
