"""Dataset manifests, per-sample feature files, split protocols and the synthetic benchmark.

Manifest (YAML)::

    name: synthetic
    renormalize_labels: false        # optional
    emotions:
      - {name: inspired, valence: positive}
    modalities:
      - {name: eeg, dim: 24, channels: 1, role: primary}
    samples:
      - {subject: s01, path: samples/s01/000.txt}
    generator: {...}                 # optional provenance of synthetic data

Feature file, one line per modality then the label::

    eeg: 0.12,-1.5,...
    label: 0.1,0.1,...
"""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .errors import ConfigError, LabelError, SchemaError, SplitError
from .msaf import ModalityConfig, check_roles
from .numeric import make_rng

VALENCES = ("positive", "negative")
PANAS_POSITIVE = ("inspired", "alert", "excited", "enthusiastic", "determined")
PANAS_NEGATIVE = ("afraid", "upset", "nervous", "scared", "distressed")
MODES = {"dep": "dep", "subject-dependent": "dep", "loso": "loso"}


@dataclass
class Sample:
    subject_id: str
    features: dict[str, np.ndarray]
    label: np.ndarray


@dataclass
class DatasetManifest:
    name: str
    emotion_names: list[str]
    valence_of: dict[str, str]
    modalities: list[ModalityConfig]
    sample_index: list[tuple[str, str]] = field(default_factory=list)
    renormalize_labels: bool = False
    generator: dict[str, Any] | None = None

    def __post_init__(self):
        if len(self.emotion_names) < 2:
            raise SchemaError("need at least 2 emotions")
        for e in self.emotion_names:
            if self.valence_of.get(e) not in VALENCES:
                raise SchemaError(f"emotion {e!r} needs a valence in {VALENCES}")
        check_roles(self.modalities)

    @property
    def n_emotions(self) -> int:
        return len(self.emotion_names)

    @property
    def valences(self) -> list[str]:
        return [self.valence_of[e] for e in self.emotion_names]

    def role(self, role: str) -> list[ModalityConfig]:
        return [m for m in self.modalities if m.role == role]

    @property
    def primary(self) -> ModalityConfig:
        return self.role("primary")[0]

    @property
    def auxiliary(self) -> list[ModalityConfig]:
        return self.role("auxiliary")

    @property
    def behavioral(self) -> ModalityConfig:
        return self.role("behavioral")[0]

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "renormalize_labels": self.renormalize_labels,
            "emotions": [{"name": e, "valence": self.valence_of[e]} for e in self.emotion_names],
            "modalities": [{"name": m.name, "dim": m.raw_dim, "channels": m.channels, "role": m.role}
                           for m in self.modalities],
            "samples": [{"subject": s, "path": p} for s, p in self.sample_index],
        }
        if self.generator is not None:
            out["generator"] = self.generator
        return out

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DatasetManifest":
        if not isinstance(data, dict):
            raise SchemaError("manifest must be a mapping")
        allowed = {"name", "renormalize_labels", "emotions", "modalities", "samples", "generator"}
        unknown = set(data) - allowed
        if unknown:
            raise SchemaError(f"unknown manifest keys {sorted(unknown)}")
        try:
            emotions = data["emotions"]
            mods = [ModalityConfig(m["name"], int(m["dim"]), int(m.get("channels", 1)), m["role"])
                    for m in data["modalities"]]
            samples = [(str(s["subject"]), str(s["path"])) for s in data.get("samples") or []]
            return cls(
                name=str(data["name"]),
                emotion_names=[e["name"] for e in emotions],
                valence_of={e["name"]: e.get("valence") for e in emotions},
                modalities=mods,
                sample_index=samples,
                renormalize_labels=bool(data.get("renormalize_labels", False)),
                generator=data.get("generator"),
            )
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed manifest: {exc!r}") from exc
        except ConfigError as exc:
            raise SchemaError(str(exc)) from exc


@dataclass
class SampleArrays:
    """Column-stacked view of a sample list: features per modality, labels, subjects."""
    features: dict[str, np.ndarray]
    labels: np.ndarray
    subjects: np.ndarray

    @classmethod
    def from_samples(cls, samples: Sequence[Sample], modalities: Sequence[ModalityConfig]) -> "SampleArrays":
        return cls({m.name: np.stack([s.features[m.name] for s in samples]) for m in modalities},
                   np.stack([s.label for s in samples]),
                   np.array([s.subject_id for s in samples]))

    def take(self, idx) -> "SampleArrays":
        idx = np.asarray(idx)
        return SampleArrays({k: v[idx] for k, v in self.features.items()}, self.labels[idx], self.subjects[idx])

    def __len__(self) -> int:
        return len(self.labels)


# ------------------------------------------------------------------ file formats


def _fmt(values) -> str:
    return ",".join(repr(float(v)) for v in values)


def write_sample_file(path: Path, sample: Sample, modalities: Sequence[ModalityConfig]) -> None:
    lines = [f"{m.name}: {_fmt(sample.features[m.name])}" for m in modalities]
    lines.append(f"label: {_fmt(sample.label)}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_sample_file(path: Path) -> tuple[dict[str, np.ndarray], np.ndarray | None]:
    values: dict[str, np.ndarray] = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        key, sep, rest = line.partition(":")
        if not sep:
            raise SchemaError(f"{path}:{n}: expected 'name: v1,v2,...'")
        try:
            values[key.strip()] = np.array([float(v) for v in rest.split(",")], dtype=float)
        except ValueError as exc:
            raise SchemaError(f"{path}:{n}: bad number") from exc
    return values, values.pop("label", None)


def write_dataset(manifest: DatasetManifest, samples: Sequence[Sample], out_dir: str | Path) -> Path:
    """Write one feature file per sample plus ``manifest.yaml``; returns the manifest path."""
    out = Path(out_dir)
    counters: dict[str, int] = {}
    index = []
    for s in samples:
        k = counters.get(s.subject_id, 0)
        counters[s.subject_id] = k + 1
        rel = Path("samples") / s.subject_id / f"{k:04d}.txt"
        (out / rel.parent).mkdir(parents=True, exist_ok=True)
        write_sample_file(out / rel, s, manifest.modalities)
        index.append((s.subject_id, rel.as_posix()))
    manifest = dataclasses.replace(manifest, sample_index=index)
    path = out / "manifest.yaml"
    path.write_text(yaml.safe_dump(manifest.to_dict(), sort_keys=False), encoding="utf-8")
    return path


def load_dataset(path: str | Path) -> tuple[DatasetManifest, list[Sample]]:
    """Read a manifest (or a directory holding ``manifest.yaml``) and its sample files."""
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.yaml"
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise SchemaError(f"cannot read manifest {path}: {exc}") from exc
    manifest = DatasetManifest.from_dict(raw)
    if not manifest.sample_index:
        raise SchemaError(f"manifest {path} lists no samples")
    samples = []
    for subject, rel in manifest.sample_index:
        fpath = path.parent / rel
        try:
            feats, label = read_sample_file(fpath)
        except OSError as exc:
            raise SchemaError(f"cannot read sample {rel}: {exc}") from exc
        for m in manifest.modalities:
            if m.name not in feats:
                raise SchemaError(f"sample {rel} is missing modality {m.name!r}")
            if feats[m.name].shape != (m.raw_dim,):
                raise SchemaError(f"sample {rel} modality {m.name!r} has {feats[m.name].size} values, "
                                  f"expected {m.raw_dim}")
        if label is None or label.shape != (manifest.n_emotions,):
            raise LabelError(f"sample {rel} needs a label with {manifest.n_emotions} entries")
        total = label.sum()
        if np.any(label < 0) or not np.isfinite(total):
            raise LabelError(f"sample {rel} has a negative or non-finite label")
        if abs(total - 1.0) > 1e-6:
            if not manifest.renormalize_labels or total <= 0:
                raise LabelError(f"sample {rel} label sums to {total}, not 1")
            label = label / total
        samples.append(Sample(subject, {m.name: feats[m.name] for m in manifest.modalities}, label))
    order = sorted(range(len(samples)), key=lambda i: samples[i].subject_id)
    return manifest, [samples[i] for i in order]


# ------------------------------------------------------------------ splits


@dataclass
class Fold:
    name: str
    train: tuple[int, ...]
    test: tuple[int, ...]


@dataclass
class SplitPlan:
    mode: str
    folds: list[Fold]
    seed: int


def make_splits(samples: Sequence[Sample], mode: str, seed: int, train_frac: float = 0.8) -> SplitPlan:
    """Subject-dependent: a seeded per-subject shuffle split into one fold per subject.
    LOSO: one fold per held-out subject."""
    if mode not in MODES:
        raise SplitError(f"unknown split mode {mode!r}")
    mode = MODES[mode]
    if not 0 < train_frac < 1:
        raise SplitError("train_frac must be in (0, 1)")
    by_subject: dict[str, list[int]] = {}
    for i, s in enumerate(samples):
        by_subject.setdefault(s.subject_id, []).append(i)
    subjects = sorted(by_subject)
    folds = []
    if mode == "dep":
        rng = make_rng(seed)
        for subj in subjects:
            idx = by_subject[subj]
            if len(idx) < 5:
                raise SplitError(f"subject {subj} has {len(idx)} samples; need >= 5")
            perm = [idx[j] for j in rng.permutation(len(idx))]
            n_train = min(max(int(round(train_frac * len(idx))), 1), len(idx) - 1)
            folds.append(Fold(subj, tuple(sorted(perm[:n_train])), tuple(sorted(perm[n_train:]))))
    else:
        if len(subjects) < 2:
            raise SplitError("LOSO needs at least 2 subjects")
        for subj in subjects:
            test = set(by_subject[subj])
            folds.append(Fold(subj, tuple(i for i in range(len(samples)) if i not in test),
                              tuple(sorted(test))))
    return SplitPlan(mode, folds, seed)


# ------------------------------------------------------------------ synthetic benchmark


def default_modalities() -> list[ModalityConfig]:
    return [ModalityConfig("eeg", 24, 1, "primary"), ModalityConfig("gsr", 8, 1, "auxiliary"),
            ModalityConfig("ppg", 8, 1, "auxiliary"), ModalityConfig("face", 32, 1, "behavioral")]


@dataclass
class GeneratorSpec:
    n_positive: int = 5
    n_negative: int = 5
    subjects: int = 6
    samples_per_subject: int = 60
    noise: float = 0.1             # feature noise sigma
    rho: float = 0.7               # weight of the shared within-valence factor
    valence_strength: float = 2.0  # pull of the latent positive/negative mixture
    label_scale: float = 1.0       # logit multiplier before the label softmax
    subject_shift: float = 0.2     # std of per-subject feature offsets
    emotion_names: list[str] | None = None
    modalities: list[ModalityConfig] = field(default_factory=default_modalities)

    def validate(self) -> "GeneratorSpec":
        if self.n_positive < 1 or self.n_negative < 1:
            raise ConfigError("need at least one positive and one negative emotion")
        if self.subjects < 1 or self.samples_per_subject < 1:
            raise ConfigError("subjects and samples_per_subject must be >= 1")
        if not 0 <= self.rho <= 1 or self.noise < 0 or self.subject_shift < 0 or self.label_scale <= 0:
            raise ConfigError("rho must be in [0, 1]; noise, subject_shift >= 0; label_scale > 0")
        if self.emotion_names is not None and len(self.emotion_names) != self.n_positive + self.n_negative:
            raise ConfigError("emotion_names must list n_positive + n_negative names")
        check_roles(self.modalities)
        return self

    def names(self) -> list[str]:
        if self.emotion_names is not None:
            return list(self.emotion_names)
        if self.n_positive == 5 and self.n_negative == 5:
            return list(PANAS_POSITIVE + PANAS_NEGATIVE)
        return [f"pos{i}" for i in range(self.n_positive)] + [f"neg{i}" for i in range(self.n_negative)]

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "GeneratorSpec":
        data = dict(data or {})
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown generator keys {sorted(unknown)}")
        if "modalities" in data:
            try:
                data["modalities"] = [ModalityConfig(m["name"], int(m["dim"]), int(m.get("channels", 1)),
                                                     m["role"]) for m in data["modalities"]]
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"malformed modality entry: {exc!r}") from exc
        try:
            return cls(**data).validate()
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["modalities"] = [{"name": m.name, "dim": m.raw_dim, "channels": m.channels, "role": m.role}
                           for m in self.modalities]
        return d


def synthetic_logits(spec: GeneratorSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    """Label logits: a latent valence mixture, one shared factor per valence (weight rho)
    and independent per-emotion noise (weight 1 - rho)."""
    e_pos, e_neg = spec.n_positive, spec.n_negative
    w = rng.uniform(0.0, 1.0, n)
    shared = rng.standard_normal((n, 2))
    own = rng.standard_normal((n, e_pos + e_neg))
    pull = np.concatenate([np.repeat(w[:, None], e_pos, 1), np.repeat(1.0 - w[:, None], e_neg, 1)], axis=1)
    factor = np.concatenate([np.repeat(shared[:, :1], e_pos, 1), np.repeat(shared[:, 1:], e_neg, 1)], axis=1)
    return spec.label_scale * (spec.valence_strength * pull + spec.rho * factor + (1.0 - spec.rho) * own)


def _softmax(x: np.ndarray) -> np.ndarray:
    z = np.exp(x - x.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def generate_synthetic(spec: GeneratorSpec, rng: np.random.Generator,
                       name: str = "synthetic") -> tuple[DatasetManifest, list[Sample]]:
    """Mixed-emotion data with planted within-valence co-occurrence.

    Features of modality m are ``logits @ A_m + offset[subject, m] + noise * N(0, 1)``
    with ``A_m`` drawn once; the maps and offsets are stored in the manifest.
    """
    spec.validate()
    names = spec.names()
    e = len(names)
    maps = {m.name: rng.standard_normal((e, m.raw_dim)) / math.sqrt(e) for m in spec.modalities}
    subjects = [f"s{i + 1:02d}" for i in range(spec.subjects)]
    offsets = {s: {m.name: spec.subject_shift * rng.standard_normal(m.raw_dim) for m in spec.modalities}
               for s in subjects}
    samples = []
    for s in subjects:
        logits = synthetic_logits(spec, spec.samples_per_subject, rng)
        labels = _softmax(logits)
        centred = logits - logits.mean(axis=1, keepdims=True)
        feats = {m.name: centred @ maps[m.name] + offsets[s][m.name]
                 + spec.noise * rng.standard_normal((spec.samples_per_subject, m.raw_dim))
                 for m in spec.modalities}
        for i in range(spec.samples_per_subject):
            samples.append(Sample(s, {k: v[i] for k, v in feats.items()}, labels[i]))
    valence = {n: ("positive" if i < spec.n_positive else "negative") for i, n in enumerate(names)}
    provenance = {
        "spec": spec.to_dict(),
        "maps": {k: v.tolist() for k, v in maps.items()},
        "subject_offsets": {s: {k: v.tolist() for k, v in o.items()} for s, o in offsets.items()},
    }
    manifest = DatasetManifest(name, names, valence, list(spec.modalities), generator=provenance)
    return manifest, samples
