"""Training losses, the six distribution metrics, average ranks, and label correlation."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields
from typing import Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, DimensionError
from .numeric import Tensor, add, as_tensor, kl_div, log, mean

FLOOR = 1e-12
# metric name -> True when larger is better
METRICS: dict[str, bool] = {
    "chebyshev": False, "clark": False, "canberra": False, "kl": False, "cosine": True, "intersection": True,
}


def check_distributions(p, what: str = "distribution", tol: float = 1e-9) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim == 0 or p.shape[-1] < 2:
        raise ContractError(f"{what} must have at least 2 components")
    if np.any(p < 0) or not np.all(np.isfinite(p)) or not np.allclose(p.sum(axis=-1), 1.0, rtol=0, atol=tol):
        raise ContractError(f"{what} must be non-negative and sum to 1")
    return p


def task_loss(y, y_hat) -> Tensor:
    """Batch-mean ``KL(y || y_hat)`` with ``0 ln 0 := 0``; differentiable in ``y_hat``."""
    y = check_distributions(y, "target")
    y_hat = as_tensor(y_hat)
    check_distributions(y_hat.data, "prediction", tol=1e-6)
    # a zero prediction is only admissible where the target is zero too (0 ln 0 := 0)
    if np.any((y_hat.data <= 0) & (y > 0)):
        raise ContractError("prediction must be positive wherever the target is")
    return mean(kl_div(y, log(y_hat, FLOOR)))


def total_loss(task, prd, semloob, use_prd: bool = True, use_pcl: bool = True) -> Tensor:
    """Unweighted sum of the three objectives; disabled terms contribute nothing."""
    out = as_tensor(task)
    if use_prd:
        out = add(out, prd)
    if use_pcl:
        out = add(out, semloob)
    return out


@dataclass
class MetricReport:
    chebyshev: float
    clark: float
    canberra: float
    kl: float
    cosine: float
    intersection: float
    count: int = 0

    def values(self) -> dict[str, float]:
        return {k: getattr(self, k) for k in METRICS}

    def to_text(self) -> str:
        return "".join(f"{k} {v!r}\n" for k, v in asdict(self).items())

    @classmethod
    def from_text(cls, text: str) -> "MetricReport":
        data = {}
        for line in text.splitlines():
            if line.strip():
                key, value = line.split(None, 1)
                data[key] = int(value) if key == "count" else float(value)
        missing = {f.name for f in fields(cls)} - set(data)
        if missing:
            raise ContractError(f"metric record missing {sorted(missing)}")
        return cls(**data)

    @classmethod
    def mean_of(cls, reports: Sequence["MetricReport"]) -> "MetricReport":
        if not reports:
            raise DimensionError("mean of zero reports")
        vals = {k: float(np.mean([r.values()[k] for r in reports])) for k in METRICS}
        return cls(**vals, count=sum(r.count for r in reports))


def metric_suite(preds, truths) -> MetricReport:
    """Per-sample LDL metrics averaged over samples; ``KL(truth || pred)`` in nats."""
    p = np.atleast_2d(np.asarray(preds, dtype=float))
    q = np.atleast_2d(np.asarray(truths, dtype=float))
    if p.shape != q.shape or p.shape[0] == 0:
        raise DimensionError(f"predictions {p.shape} and truths {q.shape} must match and be nonempty")
    diff = np.abs(p - q)
    tot = p + q
    nz = tot > 0
    safe = np.where(nz, tot, 1.0)
    clark = np.sqrt(np.where(nz, diff ** 2 / safe ** 2, 0.0).sum(axis=1))
    canberra = np.where(nz, diff / safe, 0.0).sum(axis=1)
    kl = np.where(q > 0, q * (np.log(np.where(q > 0, q, 1.0)) - np.log(np.maximum(p, FLOOR))), 0.0).sum(axis=1)
    cosine = (p * q).sum(axis=1) / (np.linalg.norm(p, axis=1) * np.linalg.norm(q, axis=1))
    return MetricReport(
        chebyshev=float(diff.max(axis=1).mean()),
        clark=float(clark.mean()),
        canberra=float(canberra.mean()),
        kl=float(kl.mean()),
        cosine=float(cosine.mean()),
        intersection=float(np.minimum(p, q).sum(axis=1).mean()),
        count=int(p.shape[0]),
    )


@dataclass
class RankRow:
    name: str
    ranks: dict[str, float]
    average: float


def average_rank(reports: Mapping[str, MetricReport]) -> list[RankRow]:
    """Direction-aware per-metric ranks (ties share the average rank), then their mean."""
    names = list(reports)
    if not names:
        raise DimensionError("average_rank needs at least one report")
    per_metric = {}
    for key, higher_better in METRICS.items():
        vals = np.array([reports[n].values()[key] for n in names])
        per_metric[key] = rankdata(-vals if higher_better else vals, method="average")
    rows = [RankRow(n, {k: float(per_metric[k][i]) for k in METRICS},
                    float(np.mean([per_metric[k][i] for k in METRICS]))) for i, n in enumerate(names)]
    return sorted(rows, key=lambda r: (r.average, names.index(r.name)))


def label_correlation(preds) -> tuple[np.ndarray, np.ndarray]:
    """Pearson correlation between emotion components across samples.

    Returns ``(corr, degenerate)``; components with zero variance get an all-zero
    row and column (diagonal included) and are flagged in ``degenerate``.
    """
    x = np.asarray(preds, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ContractError("label_correlation needs at least 2 predictions")
    # constant up to rounding: the float mean of a constant column need not equal the constant
    degenerate = np.ptp(x, axis=0) <= 1e-12 * np.abs(x).max(axis=0)
    xc = x - x.mean(axis=0)
    std = np.sqrt((xc ** 2).sum(axis=0))
    safe = np.where(degenerate, 1.0, std)
    corr = (xc.T @ xc) / np.outer(safe, safe)
    corr[degenerate, :] = 0.0
    corr[:, degenerate] = 0.0
    live = ~degenerate
    corr[live, live] = 1.0
    return np.clip(corr, -1.0, 1.0), degenerate


def valence_gap(corr: np.ndarray, valence: Sequence[str]) -> float:
    """Mean within-valence minus mean cross-valence off-diagonal correlation."""
    v = np.asarray(valence)
    same = v[:, None] == v[None, :]
    off = ~np.eye(len(v), dtype=bool)
    return float(corr[same & off].mean() - corr[~same].mean())


def format_table(reports: Mapping[str, MetricReport], digits: int = 4) -> str:
    header = f"{'':<16}" + "".join(f"{k:>14}" for k in METRICS)
    lines = [header]
    for name, r in reports.items():
        lines.append(f"{name:<16}" + "".join(f"{v:>14.{digits}f}" for v in r.values().values()))
    return "\n".join(lines)
