"""Prototypical co-occurrence learning: batch retrieval in both modal spaces and the
leave-one-out contrastive objective over the retrieved embeddings."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError
from .hopfield import hopfield_op
from .numeric import (Tensor, add, as_tensor, log_sum_exp, matmul, mean, mul, normalize_rows_l2, scale,
                      sub, sum_, transpose)

log = logging.getLogger(__name__)


@dataclass
class EnhancedBatch:
    z_tilde_phy: Tensor   # [N x D], unit rows
    z_tilde_beha: Tensor  # [N x D], unit rows
    full_phy: Tensor      # [N x K x D], before pooling
    full_beha: Tensor

    @property
    def n(self) -> int:
        return self.z_tilde_phy.shape[0]


@dataclass
class RetrievedBatch:
    u_from_phy: Tensor
    u_from_beha: Tensor
    v_from_phy: Tensor
    v_from_beha: Tensor


def enhance(z, z_proto, return_mask: bool = False):
    """Add prototype reconstructions, mean-pool the K rows, L2-normalize.

    A pooled vector that cancels to zero is replaced by the normalized pooled ``z``.
    """
    z, z_proto = as_tensor(z), as_tensor(z_proto)
    if z.shape != z_proto.shape:
        raise DimensionError(f"enhance shape mismatch {z.shape} vs {z_proto.shape}")
    pooled, zero = normalize_rows_l2(mean(add(z, z_proto), axis=-2), return_mask=True)
    if np.any(zero):
        log.warning("%d enhanced embedding(s) cancelled to zero; using the raw embedding", int(np.sum(zero)))
        fallback = normalize_rows_l2(mean(z, axis=-2), return_mask=True)[0]
        keep = (~zero).astype(float)[..., None]
        pooled = add(mul(pooled, keep), mul(fallback, 1.0 - keep))
    return (pooled, zero) if return_mask else pooled


def retrieve(queries, store, beta: float = 14.3) -> Tensor:
    """Each query retrieves a softmax mixture of the batch store, re-normalized to unit length."""
    queries, store = as_tensor(queries), as_tensor(store)
    if store.shape[0] < 2 or queries.shape[0] < 2:
        raise DimensionError("retrieval needs a batch of at least 2 samples")
    return normalize_rows_l2(hopfield_op(queries, store, store, beta))


def retrieve_all(batch: EnhancedBatch, beta: float) -> RetrievedBatch:
    u, v = batch.z_tilde_phy, batch.z_tilde_beha
    return RetrievedBatch(retrieve(u, u, beta), retrieve(v, u, beta), retrieve(u, v, beta), retrieve(v, v, beta))


def _loo_term(logits: Tensor) -> Tensor:
    """``-(1/N) sum_i [logits_ii - lse_{j != i} logits_ij]``."""
    n = logits.shape[0]
    eye = np.eye(n)
    pos = sum_(mul(logits, eye), axis=-1)
    neg = log_sum_exp(logits, 1.0, axis=-1, mask=eye == 0)
    return scale(mean(sub(pos, neg)), -1.0)


def semloob_loss(r: RetrievedBatch, tau_inv: float = 50.0) -> Tensor:
    """Leave-one-out contrastive loss: the positive pair is excluded from each denominator."""
    if not tau_inv > 0:
        raise ParameterError(f"tau_inv must be > 0, got {tau_inv}")
    if r.u_from_phy.shape[0] < 2:
        raise DimensionError("leave-one-out denominator is empty for a batch of 1")
    # anchors u_phy_i against u_beha_j
    u_logits = scale(matmul(r.u_from_phy, transpose(r.u_from_beha)), tau_inv)
    # anchors v_beha_i against v_phy_j
    v_logits = scale(matmul(r.v_from_beha, transpose(r.v_from_phy)), tau_inv)
    return add(_loo_term(u_logits), _loo_term(v_logits))


@dataclass
class PCLResult:
    loss: Tensor
    enhanced: EnhancedBatch
    retrieved: RetrievedBatch | None


def pcl_forward(z_phy, z_proto_phy, z_beha, z_proto_beha, beta: float = 14.3, tau_inv: float = 50.0,
                enabled: bool = True) -> PCLResult:
    """Enhance both modalities, retrieve four ways, score with :func:`semloob_loss`.

    With ``enabled=False`` the loss is zero and only the enhanced embeddings are built.
    """
    z_phy, z_beha = as_tensor(z_phy), as_tensor(z_beha)
    full_phy, full_beha = add(z_phy, z_proto_phy), add(z_beha, z_proto_beha)
    batch = EnhancedBatch(enhance(z_phy, z_proto_phy), enhance(z_beha, z_proto_beha), full_phy, full_beha)
    if not enabled:
        return PCLResult(Tensor(0.0), batch, None)
    if batch.n < 2:
        raise DimensionError("co-occurrence learning needs a batch of at least 2 samples")
    r = retrieve_all(batch, beta)
    return PCLResult(semloob_loss(r, tau_inv), batch, r)
