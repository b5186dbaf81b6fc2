"""Continuous modern Hopfield network: energy, one-step retrieval, and the matrix operator.

Stored patterns for :func:`energy`, :func:`update` and :func:`iterate_to_fixpoint`
are the *columns* of ``X`` (shape ``[d x M]``). :func:`hopfield_op` uses the
row convention (queries ``R``, keys ``Y``, values ``V``) shared by every model
component.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, ParameterError
from .numeric import Tensor, as_tensor, log_sum_exp, matmul, softmax_rows, transpose


@dataclass(frozen=True)
class EnergyParams:
    beta: float
    c0: float = 0.0

    def __post_init__(self):
        if not self.beta > 0:
            raise ParameterError(f"beta must be > 0, got {self.beta}")


def _check_state(xi: np.ndarray, X: np.ndarray) -> None:
    if X.ndim != 2 or xi.ndim != 1 or xi.shape[0] != X.shape[0] or X.shape[1] < 1:
        raise DimensionError(f"state {xi.shape} incompatible with stored patterns {X.shape}")


def energy(xi, X, p: EnergyParams) -> float:
    """``-lse(beta, X^T xi) + 0.5 |xi|^2 + c0``."""
    xi, X = np.asarray(xi, dtype=float), np.asarray(X, dtype=float)
    _check_state(xi, X)
    lse = float(log_sum_exp(X.T @ xi, p.beta).data)
    return -lse + 0.5 * float(xi @ xi) + p.c0


def hopfield_op(R, Y, V, beta: float) -> Tensor:
    """``softmax(beta R Y^T) V`` with a row-wise softmax; leading axes broadcast."""
    R, Y, V = as_tensor(R), as_tensor(Y), as_tensor(V)
    if R.shape[-1] != Y.shape[-1] or Y.shape[-2] != V.shape[-2]:
        raise DimensionError(f"hopfield_op shapes R={R.shape} Y={Y.shape} V={V.shape}")
    return matmul(softmax_rows(matmul(R, transpose(Y)), beta), V)


def update(xi, X, beta: float) -> np.ndarray:
    """One retrieval step ``X softmax(beta X^T xi)``."""
    xi, X = np.asarray(xi, dtype=float), np.asarray(X, dtype=float)
    _check_state(xi, X)
    return hopfield_op(xi[None, :], X.T, X.T, beta).data[0]


@dataclass
class FixpointResult:
    state: np.ndarray
    iterations: int
    converged: bool
    energies: list[float] = field(default_factory=list)


def iterate_to_fixpoint(xi, X, beta: float, max_iters: int = 64, tol: float = 1e-8) -> FixpointResult:
    """Apply :func:`update` until the L-inf state change drops below ``tol``.

    ``energies[0]`` is the energy of the starting state; one entry is appended per step.
    """
    if max_iters < 1 or not tol > 0:
        raise ParameterError("max_iters must be >= 1 and tol > 0")
    p = EnergyParams(beta)
    state = np.asarray(xi, dtype=float)
    trace = [energy(state, X, p)]
    for it in range(1, max_iters + 1):
        new = update(state, X, beta)
        trace.append(energy(new, X, p))
        delta = float(np.max(np.abs(new - state)))
        state = new
        if delta < tol:
            return FixpointResult(state, it, True, trace)
    return FixpointResult(state, max_iters, False, trace)
