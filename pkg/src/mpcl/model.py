"""Parameter layout and the end-to-end forward pass (encoders -> fusion -> banks ->
co-occurrence -> compression -> head) returning every loss term."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .config import TrainConfig
from .data import DatasetManifest, SampleArrays
from .errors import ConfigError
from .hsc import ClassifierHead, CompressionBlock, SlotSchedule, head_logits, hsc_forward, hsc_init
from .metrics import total_loss
from .msaf import EncoderParams, encode, fuse_all, stack_unfused
from .numeric import Tensor, kl_div, log_softmax_rows, mean, reshape
from .pcl import pcl_forward
from .prototype import PrototypeBank, address, prd_loss, prd_teachers, semantic_correlation


@dataclass
class ModelParams:
    """Named float64 arrays in a fixed slot order, with a flat view for diagnostics."""
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def slots(self) -> list[str]:
        return list(self.arrays)

    def flat(self) -> np.ndarray:
        return np.concatenate([a.reshape(-1) for a in self.arrays.values()])

    def load_flat(self, flat: np.ndarray) -> None:
        pos = 0
        for k, a in self.arrays.items():
            a[...] = flat[pos:pos + a.size].reshape(a.shape)
            pos += a.size

    def copy(self) -> "ModelParams":
        return ModelParams({k: v.copy() for k, v in self.arrays.items()})

    def __len__(self) -> int:
        return sum(a.size for a in self.arrays.values())


def schedule_for(cfg: TrainConfig, n_emotions: int) -> SlotSchedule:
    m = cfg.model
    try:
        return SlotSchedule.geometric(m.prototypes, n_emotions, m.blocks)
    except ConfigError as exc:
        raise ConfigError(f"slot schedule: {exc}") from exc


def init_params(manifest: DatasetManifest, cfg: TrainConfig, rng: np.random.Generator) -> ModelParams:
    m = cfg.model
    d, c = m.dim, m.seq_len
    k = len(manifest.auxiliary) * c
    p: dict[str, np.ndarray] = {}
    for mod in manifest.modalities:
        rows = k if mod.role == "behavioral" else c
        enc = EncoderParams.init(mod.raw_dim, m.hidden_width, rows, d, rng)
        p.update({f"enc.{mod.name}.{n}": getattr(enc, n) for n in ("w1", "b1", "w2", "b2")})
    if cfg.ablate.msaf:
        lim = 1.0 / math.sqrt(len(m.scales) * d)
        for mod in manifest.auxiliary:
            p[f"fuse.{mod.name}.w_proj"] = rng.uniform(-lim, lim, (len(m.scales) * d, d))
    for side in ("phy", "beha"):
        bank = PrototypeBank.init(m.prototypes, d, rng)
        p[f"bank.{side}.address"], p[f"bank.{side}.memory"] = bank.address, bank.memory
    if cfg.ablate.hsc:
        blocks = hsc_init(p["bank.phy.memory"], schedule_for(cfg, manifest.n_emotions), m.heads, rng)
        for i, b in enumerate(blocks):
            for n in ("lookup", "content", "wq", "wk", "wv", "wo"):
                p[f"hsc.{i}.{n}"] = getattr(b, n)
    lim = 1.0 / math.sqrt(d)
    p["head.w"] = rng.uniform(-lim, lim, (d, manifest.n_emotions))
    p["head.b"] = np.zeros(manifest.n_emotions)
    return ModelParams(p)


@dataclass
class ForwardResult:
    total: Tensor
    task: Tensor
    prd: Tensor
    semloob: Tensor
    y_hat: np.ndarray
    detached: dict = field(default_factory=dict)


def _encoder(t: Mapping[str, Tensor], name: str) -> EncoderParams:
    return EncoderParams(*(t[f"enc.{name}.{n}"] for n in ("w1", "b1", "w2", "b2")))


def _blocks(t: Mapping[str, Tensor]) -> list[CompressionBlock]:
    out, i = [], 0
    while f"hsc.{i}.lookup" in t:
        out.append(CompressionBlock(*(t[f"hsc.{i}.{n}"] for n in ("lookup", "content", "wq", "wk", "wv", "wo"))))
        i += 1
    return out


def forward(t: Mapping[str, Tensor], manifest: DatasetManifest, cfg: TrainConfig, batch: SampleArrays,
            frozen: dict | None = None, with_aux_losses: bool = True) -> ForwardResult:
    """Full model on a batch. ``t`` maps slot names to tensors (leaves when training).

    ``frozen`` replays gradient-free quantities (the distillation teacher rows) from an
    earlier call so finite differences see the same stop-gradient objective.
    """
    m, ab = cfg.model, cfg.ablate
    d = m.dim
    pri, beh = manifest.primary, manifest.behavioral
    h_pri = encode(batch.features[pri.name], pri, _encoder(t, pri.name), d)
    aux = [encode(batch.features[a.name], a, _encoder(t, a.name), d) for a in manifest.auxiliary]
    if ab.msaf:
        z_phy = fuse_all(h_pri, aux, m.scales, [t[f"fuse.{a.name}.w_proj"] for a in manifest.auxiliary])
    else:
        z_phy = stack_unfused(h_pri, aux)
    z_beha = encode(batch.features[beh.name], beh, _encoder(t, beh.name), d)

    bank_phy = PrototypeBank(t["bank.phy.address"], t["bank.phy.memory"], m.beta_addr)
    bank_beha = PrototypeBank(t["bank.beha.address"], t["bank.beha.memory"], m.beta_addr)
    addr_phy, addr_beha = address(z_phy, bank_phy), address(z_beha, bank_beha)

    detached: dict = {}
    prd = Tensor(0.0)
    if with_aux_losses and ab.prd:
        s_phy = semantic_correlation(bank_phy, m.tau_dist).data
        s_beha = semantic_correlation(bank_beha, m.tau_dist).data
        teachers = frozen["prd_teachers"] if frozen else prd_teachers(addr_phy.a, addr_beha.a, s_phy, s_beha)
        detached["prd_teachers"] = teachers
        prd = prd_loss(addr_phy.a, addr_beha.a, s_phy, s_beha, teachers=teachers)

    pcl = pcl_forward(z_phy, addr_phy.z_proto, z_beha, addr_beha.z_proto, m.beta_pcl, m.tau_pcl_inv,
                      enabled=with_aux_losses and ab.pcl)
    h = hsc_forward(pcl.enhanced.full_phy, pcl.enhanced.full_beha, _blocks(t) if ab.hsc else [], m.beta_addr)
    logits = head_logits(h, ClassifierHead(t["head.w"], t["head.b"]))
    log_q = log_softmax_rows(reshape(logits, (logits.shape[0], logits.shape[-1])))
    task = mean(kl_div(batch.labels, log_q))
    total = total_loss(task, prd, pcl.loss, use_prd=ab.prd, use_pcl=ab.pcl)
    return ForwardResult(total, task, prd, pcl.loss, np.exp(log_q.data), detached)


def as_tensors(params: ModelParams) -> dict[str, Tensor]:
    return {k: Tensor(v) for k, v in params.arrays.items()}


def predict_arrays(params: ModelParams, manifest: DatasetManifest, cfg: TrainConfig,
                   batch: SampleArrays) -> np.ndarray:
    return forward(as_tensors(params), manifest, cfg, batch, with_aux_losses=False).y_hat
