"""Adam, the fold training loop, binary checkpoints, evaluation and the protocol driver."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import tempfile
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from .config import TrainConfig, config_hash, dump_config, from_dict
from .data import DatasetManifest, Fold, Sample, SampleArrays, SplitPlan
from .errors import ContractError, DimensionError, MPCLError, TrainingError
from .metrics import MetricReport, label_correlation, metric_suite
from .model import ModelParams, as_tensors, forward, init_params, predict_arrays
from .numeric import GradCheckReport, GradientTape, Tensor, grad_check, make_rng

log = logging.getLogger("mpcl")

HISTORY_KEYS = ("total", "task", "prd", "semloob")
CKPT_MAGIC = b"MPCLCKPT"
CKPT_VERSION = 1


def fold_rng(seed: int, fold: int) -> np.random.Generator:
    """Independent PCG64 stream per (seed, fold); does not depend on worker count."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(fold)])))


# ------------------------------------------------------------------ optimizer


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def zeros(cls, params: ModelParams) -> "AdamState":
        return cls({k: np.zeros_like(a) for k, a in params.arrays.items()},
                   {k: np.zeros_like(a) for k, a in params.arrays.items()})


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState,
              cfg: TrainConfig) -> tuple[ModelParams, AdamState]:
    """Bias-corrected Adam, in place. Gradients are validated before anything moves."""
    for k, a in params.arrays.items():
        g = grads.get(k)
        if g is None:
            continue
        if g.shape != a.shape:
            raise DimensionError(f"gradient for {k} has shape {g.shape}, parameter {a.shape}")
        if not np.all(np.isfinite(g)):
            raise TrainingError(f"non-finite gradient in slot {k}")
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    c1, c2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t
    for k, a in params.arrays.items():
        g = grads.get(k)
        if g is None:
            g = np.zeros_like(a)
        m, v = state.m[k], state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        a -= cfg.lr * (m / c1) / (np.sqrt(v / c2) + cfg.adam_eps)
    return params, state


# ------------------------------------------------------------------ training loop


class Trainer:
    """Owns the parameters, optimizer state, shuffle stream and epoch cursor of one fold.

    Parameters are drawn from ``rng`` first; the same generator then drives the
    per-epoch shuffles, so a checkpoint only needs its bit-generator state.
    """

    def __init__(self, manifest: DatasetManifest, cfg: TrainConfig, data: SampleArrays,
                 rng: np.random.Generator, params: ModelParams | None = None):
        if len(data) == 0:
            raise ContractError("training set is empty")
        if cfg.batch_size < 2:
            raise ContractError("batch_size must be >= 2")
        self.manifest, self.cfg, self.data, self.rng = manifest, cfg, data, rng
        self.params = params if params is not None else init_params(manifest, cfg, rng)
        self.adam = AdamState.zeros(self.params)
        self.epoch = 0
        self.order: np.ndarray | None = None  # shuffle of the current epoch
        self.cursor = 0                       # next batch within ``order``
        self.sums = {k: 0.0 for k in HISTORY_KEYS}
        self.batches = 0
        self.history: list[dict[str, float]] = []

    def batch_starts(self) -> range:
        n, b = len(self.data), self.cfg.batch_size
        # a trailing batch of 1 cannot form a leave-one-out denominator
        return range(0, n - 1 if n % b == 1 else n, b)

    def step(self) -> dict[str, float]:
        """One optimizer step on the next batch; starts a new epoch when needed."""
        if self.order is None:
            self.order = self.rng.permutation(len(self.data))
            self.cursor = 0
        starts = self.batch_starts()
        if len(starts) == 0:
            raise ContractError(f"{len(self.data)} training samples cannot fill a batch of 2")
        start = starts[self.cursor]
        idx = self.order[start:start + self.cfg.batch_size]
        batch = self.data.take(idx)
        with GradientTape() as tape:
            leaves = {k: Tensor(a, requires_grad=True, name=k) for k, a in self.params.arrays.items()}
            res = forward(leaves, self.manifest, self.cfg, batch)
            terms = {"total": float(res.total.data), "task": float(res.task.data),
                     "prd": float(res.prd.data), "semloob": float(res.semloob.data)}
            if not np.isfinite(terms["total"]):
                raise TrainingError(
                    f"non-finite loss at epoch {self.epoch} batch {self.cursor} "
                    f"(samples {idx.tolist()}): {terms}")
            tape.backward(res.total)
        grads = {k: t.grad for k, t in leaves.items() if t.grad is not None}
        try:
            adam_step(self.params, grads, self.adam, self.cfg)
        except TrainingError as exc:
            raise TrainingError(f"epoch {self.epoch} batch {self.cursor}: {exc}") from exc
        for k in HISTORY_KEYS:
            self.sums[k] += terms[k]
        self.batches += 1
        self.cursor += 1
        if self.cursor == len(starts):
            self.history.append({k: self.sums[k] / self.batches for k in HISTORY_KEYS})
            self.sums = {k: 0.0 for k in HISTORY_KEYS}
            self.batches = 0
            self.epoch += 1
            self.order = None
        return terms

    def run(self, epochs: int | None = None) -> list[dict[str, float]]:
        target = self.cfg.epochs if epochs is None else epochs
        while self.epoch < target:
            self.step()
            if self.order is None and (self.epoch % 10 == 0 or self.epoch == target):
                h = self.history[-1]
                log.info("epoch %d/%d total %.4f task %.4f", self.epoch, target, h["total"], h["task"])
        return self.history

    # -------------------------------------------------------------- checkpoints

    def payload(self) -> tuple[dict, list[tuple[str, np.ndarray]]]:
        meta = {
            "epoch": self.epoch, "t": self.adam.t, "cursor": self.cursor,
            "order": None if self.order is None else self.order.tolist(),
            "sums": self.sums, "batches": self.batches, "history": self.history,
            "rng": self.rng.bit_generator.state,
            "config": dump_config(self.cfg), "config_hash": config_hash(self.cfg),
        }
        blocks = [(f"param/{k}", a) for k, a in self.params.arrays.items()]
        blocks += [(f"adam_m/{k}", a) for k, a in self.adam.m.items()]
        blocks += [(f"adam_v/{k}", a) for k, a in self.adam.v.items()]
        return meta, blocks

    def save(self, path: str | Path) -> None:
        write_checkpoint(path, *self.payload())

    @classmethod
    def load(cls, path: str | Path, manifest: DatasetManifest, data: SampleArrays) -> "Trainer":
        meta, blocks = read_checkpoint(path)
        cfg = from_dict(yaml.safe_load(meta["config"]))
        if config_hash(cfg) != meta["config_hash"]:
            raise ContractError(f"{path}: config hash mismatch")
        params = ModelParams({k[len("param/"):]: a for k, a in blocks.items() if k.startswith("param/")})
        rng = np.random.Generator(np.random.PCG64())
        rng.bit_generator.state = meta["rng"]
        tr = cls(manifest, cfg, data, rng, params=params)
        tr.adam = AdamState({k: blocks[f"adam_m/{k}"] for k in params.arrays},
                            {k: blocks[f"adam_v/{k}"] for k in params.arrays}, meta["t"])
        tr.epoch, tr.cursor, tr.batches = meta["epoch"], meta["cursor"], meta["batches"]
        tr.order = None if meta["order"] is None else np.array(meta["order"], dtype=np.int64)
        tr.sums, tr.history = meta["sums"], meta["history"]
        return tr


def objective_grad_check(manifest: DatasetManifest, data: SampleArrays, cfg: TrainConfig, eps: float = 1e-5,
                         tol: float = 1e-4, max_coords: int | None = 24, oracle: str = "extended") -> GradCheckReport:
    """Finite-difference check of the full training objective on the first batch at the seeded init.

    PRD teachers are taken at the base point and held fixed, matching the stop-gradient on the tape.
    """
    batch = data.take(np.arange(min(cfg.batch_size, len(data))))
    params = init_params(manifest, cfg, make_rng(cfg.seed))
    base = forward(as_tensors(params), manifest, cfg, batch)

    def objective(t):
        return forward(t, manifest, cfg, batch, frozen=base.detached).total

    return grad_check(objective, params.arrays, eps=eps, tol=tol, max_coords=max_coords or None,
                      rng=make_rng(cfg.seed + 1), oracle=oracle)


def write_checkpoint(path: str | Path, meta: dict, blocks: Sequence[tuple[str, np.ndarray]]) -> None:
    """Layout: magic, u32 version, u64 metadata length, metadata JSON, u32 block count,
    then per block: u16 name length, name, u8 ndim, u64 dims, little-endian f64 data.
    Written to a temporary file in the same directory and renamed into place."""
    path = Path(path)
    head = json.dumps(meta).encode()
    parts = [CKPT_MAGIC, struct.pack("<IQ", CKPT_VERSION, len(head)), head, struct.pack("<I", len(blocks))]
    for name, a in blocks:
        nb = name.encode()
        a = np.asarray(a, dtype="<f8", order="C")
        parts += [struct.pack("<H", len(nb)), nb, struct.pack("<B", a.ndim),
                  struct.pack(f"<{a.ndim}Q", *a.shape), a.tobytes()]
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(b"".join(parts))
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def read_checkpoint(path: str | Path) -> tuple[dict, dict[str, np.ndarray]]:
    buf = Path(path).read_bytes()
    if buf[:len(CKPT_MAGIC)] != CKPT_MAGIC:
        raise ContractError(f"{path}: not a checkpoint")
    pos = len(CKPT_MAGIC)
    version, n = struct.unpack_from("<IQ", buf, pos)
    if version != CKPT_VERSION:
        raise ContractError(f"{path}: unsupported checkpoint version {version}")
    pos += 12
    meta = json.loads(buf[pos:pos + n])
    pos += n
    (count,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    blocks = {}
    for _ in range(count):
        (ln,) = struct.unpack_from("<H", buf, pos)
        name = buf[pos + 2:pos + 2 + ln].decode()
        pos += 2 + ln
        (ndim,) = struct.unpack_from("<B", buf, pos)
        shape = struct.unpack_from(f"<{ndim}Q", buf, pos + 1)
        pos += 1 + 8 * ndim
        size = int(np.prod(shape, dtype=np.int64))
        blocks[name] = np.frombuffer(buf, dtype="<f8", count=size, offset=pos).astype(np.float64).reshape(shape)
        pos += 8 * size
    if pos != len(buf):
        raise ContractError(f"{path}: {len(buf) - pos} trailing bytes")
    return meta, blocks


def train_fold(manifest: DatasetManifest, data: SampleArrays, cfg: TrainConfig,
               rng: np.random.Generator) -> tuple[ModelParams, list[dict[str, float]]]:
    tr = Trainer(manifest, cfg, data, rng)
    return tr.params, tr.run()


def load_params(path: str | Path) -> tuple[ModelParams, TrainConfig]:
    meta, blocks = read_checkpoint(path)
    cfg = from_dict(yaml.safe_load(meta["config"]))
    return ModelParams({k[len("param/"):]: a for k, a in blocks.items() if k.startswith("param/")}), cfg


# ------------------------------------------------------------------ evaluation


def predict(params: ModelParams, manifest: DatasetManifest, cfg: TrainConfig, data: SampleArrays,
            chunk: int = 256) -> np.ndarray:
    """Forward-only predicted distributions, evaluated in fixed-size chunks."""
    if len(data) == 0:
        raise ContractError("test set is empty")
    return np.concatenate([predict_arrays(params, manifest, cfg, data.take(np.arange(i, min(i + chunk, len(data)))))
                           for i in range(0, len(data), chunk)])


def evaluate(params: ModelParams, manifest: DatasetManifest, cfg: TrainConfig, data: SampleArrays) -> MetricReport:
    return metric_suite(predict(params, manifest, cfg, data), data.labels)


def uniform_report(labels: np.ndarray) -> MetricReport:
    return metric_suite(np.full(labels.shape, 1.0 / labels.shape[1]), labels)


@dataclass
class FoldResult:
    name: str
    report: MetricReport
    baseline: MetricReport
    history: list[dict[str, float]]
    predictions: np.ndarray
    truths: np.ndarray
    checkpoint: tuple[dict, list] | None = field(default=None, repr=False)


@dataclass
class ProtocolResult:
    mean: MetricReport
    folds: list[FoldResult]
    baseline: MetricReport
    correlation: np.ndarray
    degenerate: np.ndarray
    run_dir: Path | None = None
    hash: str = ""

    @property
    def predictions(self) -> np.ndarray:
        return np.concatenate([f.predictions for f in self.folds])

    @property
    def truths(self) -> np.ndarray:
        return np.concatenate([f.truths for f in self.folds])


def _run_fold(manifest: DatasetManifest, arrays: SampleArrays, fold: Fold, k: int, cfg: TrainConfig) -> FoldResult:
    train, test = arrays.take(list(fold.train)), arrays.take(list(fold.test))
    log.info("fold %d (%s): %d train, %d test", k, fold.name, len(train), len(test))
    try:
        tr = Trainer(manifest, cfg, train, fold_rng(cfg.seed, k))
        history = tr.run()
        preds = predict(tr.params, manifest, cfg, test)
    except MPCLError as exc:
        raise type(exc)(f"fold {k} ({fold.name}): {exc}") from exc
    return FoldResult(fold.name, metric_suite(preds, test.labels), uniform_report(test.labels),
                      history, preds, test.labels, tr.payload())


def run_protocol(manifest: DatasetManifest, samples: Sequence[Sample], plan: SplitPlan, cfg: TrainConfig,
                 out_dir: str | Path | None = None, jobs: int = 1) -> ProtocolResult:
    """Train and evaluate every fold, average the fold reports, write artifacts if ``out_dir``."""
    cfg.validate()
    if not plan.folds:
        raise ContractError("split plan has no folds")
    arrays = SampleArrays.from_samples(samples, manifest.modalities)
    args = [(manifest, arrays, fold, k, cfg) for k, fold in enumerate(plan.folds)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            folds = list(pool.map(_run_fold, *zip(*args)))
    else:
        folds = [_run_fold(*a) for a in args]
    preds = np.concatenate([f.predictions for f in folds])
    corr, degenerate = label_correlation(preds)
    result = ProtocolResult(MetricReport.mean_of([f.report for f in folds]), folds,
                            MetricReport.mean_of([f.baseline for f in folds]), corr, degenerate)
    result.hash = config_hash(cfg, plan.mode, str(plan.seed), dataset_digest(manifest, samples))
    if out_dir is not None:
        result.run_dir = write_run(Path(out_dir), result, cfg, plan, manifest)
    return result


def dataset_digest(manifest: DatasetManifest, samples: Sequence[Sample]) -> str:
    h = hashlib.sha256(yaml.safe_dump(manifest.to_dict(), sort_keys=True).encode())
    for s in samples:
        h.update(s.subject_id.encode())
        h.update(np.ascontiguousarray(s.label, dtype="<f8").tobytes())
        for m in manifest.modalities:
            h.update(np.ascontiguousarray(s.features[m.name], dtype="<f8").tobytes())
    return h.hexdigest()[:12]


def write_run(out_dir: Path, result: ProtocolResult, cfg: TrainConfig, plan: SplitPlan,
              manifest: DatasetManifest) -> Path:
    run = out_dir / f"run.{result.hash}"
    run.mkdir(parents=True, exist_ok=True)
    (run / "config").write_text(dump_config(cfg), encoding="utf-8")
    (run / "protocol").write_text(yaml.safe_dump({
        "mode": plan.mode, "seed": plan.seed, "dataset": manifest.name,
        "emotions": manifest.emotion_names, "valences": manifest.valences,
        "folds": [f.name for f in result.folds]}, sort_keys=False), encoding="utf-8")
    (run / "metrics").write_text(result.mean.to_text(), encoding="utf-8")
    (run / "baseline").write_text(result.baseline.to_text(), encoding="utf-8")
    for k, f in enumerate(result.folds):
        d = run / f"fold-{k}"
        d.mkdir(exist_ok=True)
        (d / "metrics").write_text(f.report.to_text(), encoding="utf-8")
        (d / "test_index").write_text("".join(f"{i}\n" for i in plan.folds[k].test), encoding="utf-8")
        if f.checkpoint is not None:
            write_checkpoint(d / "checkpoint", *f.checkpoint)
    lines = ["fold epoch " + " ".join(HISTORY_KEYS)]
    for k, f in enumerate(result.folds):
        lines += [f"{k} {e + 1} " + " ".join(repr(h[key]) for key in HISTORY_KEYS) for e, h in enumerate(f.history)]
    (run / "history").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (run / "label_correlation").write_text(
        "".join(" ".join(repr(float(v)) for v in row) + "\n" for row in result.correlation), encoding="utf-8")
    return run
