import numpy as np
import pytest
import yaml
from hypothesis import given, settings
from hypothesis import strategies as st

from mpcl.data import (DatasetManifest, GeneratorSpec, Sample, SampleArrays, generate_synthetic, load_dataset,
                       make_splits, synthetic_logits, write_dataset)
from mpcl.errors import ConfigError, LabelError, SchemaError, SplitError
from mpcl.metrics import label_correlation, valence_gap
from mpcl.msaf import ModalityConfig
from mpcl.numeric import make_rng


def toy_samples(subjects=3, per=10):
    rng = make_rng(0)
    out = []
    for s in range(subjects):
        for _ in range(per):
            out.append(Sample(f"s{s}", {"x": rng.standard_normal(2)}, np.array([0.5, 0.5])))
    return out


def test_generate_default_shape():
    man, samples = generate_synthetic(GeneratorSpec(), make_rng(0))
    assert man.n_emotions == 10 and man.valences == ["positive"] * 5 + ["negative"] * 5
    assert man.emotion_names[0] == "inspired" and len(samples) == 360
    assert {m.role for m in man.modalities} == {"primary", "auxiliary", "behavioral"}
    assert all(abs(s.label.sum() - 1) < 1e-12 for s in samples)


def test_generate_same_seed_identical():
    a = generate_synthetic(GeneratorSpec(subjects=2, samples_per_subject=5), make_rng(4))[1]
    b = generate_synthetic(GeneratorSpec(subjects=2, samples_per_subject=5), make_rng(4))[1]
    assert all(np.array_equal(x.label, y.label) and
               all(np.array_equal(x.features[k], y.features[k]) for k in x.features) for x, y in zip(a, b))


def test_rho_zero_gap_from_valence_mixture_only():
    # logits = 2 * pull(w) + own: within-valence corr = (4/12)/(4/12+1) = 0.25, cross = -0.25
    spec = GeneratorSpec(rho=0.0, noise=0.0)
    logits = synthetic_logits(spec, 10000, make_rng(1))
    corr = np.corrcoef(logits.T)
    gap = valence_gap(corr, ["p"] * 5 + ["n"] * 5)
    assert gap == pytest.approx(0.5, abs=0.05)


def test_rho_one_same_valence_identical():
    spec = GeneratorSpec(rho=1.0, noise=0.0, subjects=1, samples_per_subject=200)
    _, samples = generate_synthetic(spec, make_rng(2))
    labels = np.stack([s.label for s in samples])
    corr, _ = label_correlation(labels)
    assert np.allclose(corr[:5, :5], 1.0, atol=1e-9) and np.allclose(corr[5:, 5:], 1.0, atol=1e-9)


def test_planted_structure_visible_in_labels():
    _, samples = generate_synthetic(GeneratorSpec(), make_rng(3))
    corr, _ = label_correlation(np.stack([s.label for s in samples]))
    assert valence_gap(corr, ["p"] * 5 + ["n"] * 5) > 0.5


def test_generator_spec_validation():
    with pytest.raises(ConfigError):
        GeneratorSpec.from_dict({"rho": 1.5})
    with pytest.raises(ConfigError):
        GeneratorSpec.from_dict({"colour": 1})
    assert GeneratorSpec.from_dict({"n_positive": 2, "n_negative": 3}).names()[0] == "pos0"


def test_write_load_roundtrip(tmp_path):
    man, samples = generate_synthetic(GeneratorSpec(subjects=2, samples_per_subject=6), make_rng(5))
    path = write_dataset(man, samples, tmp_path / "ds")
    man2, samples2 = load_dataset(tmp_path / "ds")
    assert man2.emotion_names == man.emotion_names and len(samples2) == 12
    assert sorted({s.subject_id for s in samples2}) == ["s01", "s02"]
    for a, b in zip(samples, samples2):
        assert np.array_equal(a.label, b.label) and np.array_equal(a.features["eeg"], b.features["eeg"])
    assert load_dataset(path)[0].name == man.name


def test_write_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        man, samples = generate_synthetic(GeneratorSpec(subjects=1, samples_per_subject=3), make_rng(6))
        write_dataset(man, samples, tmp_path / d)
    for f in (tmp_path / "a").rglob("*"):
        if f.is_file():
            assert f.read_bytes() == (tmp_path / "b" / f.relative_to(tmp_path / "a")).read_bytes()


def _manifest_dict(**extra):
    d = {"name": "t", "emotions": [{"name": "a", "valence": "positive"}, {"name": "b", "valence": "negative"}],
         "modalities": [{"name": "e", "dim": 2, "role": "primary"}, {"name": "g", "dim": 1, "role": "auxiliary"},
                        {"name": "f", "dim": 1, "role": "behavioral"}],
         "samples": [{"subject": "s1", "path": "x.txt"}]}
    d.update(extra)
    return d


def _write(tmp_path, body, **extra):
    (tmp_path / "x.txt").write_text(body)
    (tmp_path / "manifest.yaml").write_text(yaml.safe_dump(_manifest_dict(**extra)))
    return tmp_path


def test_load_errors(tmp_path):
    with pytest.raises(SchemaError):
        load_dataset(_write(tmp_path, "e: 1,2\ng: 1\nlabel: 0.5,0.5\n"))
    with pytest.raises(SchemaError):
        load_dataset(_write(tmp_path, "e: 1,2,3\ng: 1\nf: 1\nlabel: 0.5,0.5\n"))
    with pytest.raises(LabelError):
        load_dataset(_write(tmp_path, "e: 1,2\ng: 1\nf: 1\nlabel: 0.5,0.7\n"))
    _, s = load_dataset(_write(tmp_path, "e: 1,2\ng: 1\nf: 1\nlabel: 1,3\n", renormalize_labels=True))
    assert s[0].label.tolist() == [0.25, 0.75]
    with pytest.raises(SchemaError):
        load_dataset(_write(tmp_path, "e: 1,2\ng: 1\nf: 1\nlabel: 0.5,0.5\n", samples=[]))
    with pytest.raises(SchemaError):
        load_dataset(_write(tmp_path, "", modalities=[{"name": "e", "dim": 2, "role": "primary"}]))


def test_full_size_manifest_validates():
    mods = [ModalityConfig("eeg", 90, 1, "primary"), ModalityConfig("gsr", 28, 1, "auxiliary"),
            ModalityConfig("ppg", 27, 1, "auxiliary"), ModalityConfig("face", 768, 1, "behavioral")]
    names = [f"e{i}" for i in range(10)]
    man = DatasetManifest("full-size", names, {n: "positive" if i < 5 else "negative" for i, n in enumerate(names)},
                          mods)
    assert DatasetManifest.from_dict(man.to_dict()).modalities == mods
    assert len(man.auxiliary) == 2


def test_split_arithmetic():
    plan = make_splits(toy_samples(3, 10), "dep", 0)
    assert [(len(f.train), len(f.test)) for f in plan.folds] == [(8, 2)] * 3
    loso = make_splits(toy_samples(3, 10), "loso", 0)
    assert len(loso.folds) == 3 and all(len(f.test) == 10 for f in loso.folds)
    assert make_splits(toy_samples(), "dep", 9) == make_splits(toy_samples(), "dep", 9)


def test_split_errors():
    with pytest.raises(SplitError):
        make_splits(toy_samples(), "kfold", 0)
    with pytest.raises(SplitError):
        make_splits(toy_samples(1, 10), "loso", 0)
    with pytest.raises(SplitError):
        make_splits(toy_samples(2, 3), "dep", 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 6), st.integers(5, 15), st.integers(0, 10**6))
def test_split_properties(n_subj, per, seed):
    samples = toy_samples(n_subj, per)
    subj = [s.subject_id for s in samples]
    for mode in ("dep", "loso"):
        plan = make_splits(samples, mode, seed)
        for f in plan.folds:
            assert not set(f.train) & set(f.test) and f.test
        if mode == "loso":
            assert len(plan.folds) == n_subj
            assert sorted(i for f in plan.folds for i in f.test) == list(range(len(samples)))
            for f in plan.folds:
                assert len({subj[i] for i in f.test}) == 1 and subj[f.test[0]] not in {subj[i] for i in f.train}
        else:
            for f in plan.folds:
                assert set(f.train) | set(f.test) == {i for i, s in enumerate(subj) if s == f.name}


def test_sample_arrays_take():
    arr = SampleArrays.from_samples(toy_samples(2, 5), [ModalityConfig("x", 2)])
    sub = arr.take([0, 7])
    assert len(sub) == 2 and sub.features["x"].shape == (2, 2) and sub.subjects.tolist() == ["s0", "s1"]
