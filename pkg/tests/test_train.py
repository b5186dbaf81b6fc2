import numpy as np
import pytest

from conftest import tiny_config, tiny_dataset
from mpcl.config import apply_overrides, from_dict
from mpcl.data import SampleArrays, make_splits
from mpcl.errors import ContractError, TrainingError
from mpcl.metrics import MetricReport, metric_suite
from mpcl.model import ModelParams, init_params
from mpcl.numeric import make_rng
from mpcl.train import (AdamState, Trainer, adam_step, evaluate, fold_rng, read_checkpoint, run_protocol, train_fold,
                        uniform_report, write_checkpoint)


def _scalar(v=0.0):
    return ModelParams({"x": np.array([v])})


def test_adam_zero_gradient():
    p, cfg = _scalar(1.5), from_dict(None)
    st = AdamState({"x": np.array([0.2])}, {"x": np.array([0.04])})
    adam_step(p, {"x": np.zeros(1)}, st, cfg)
    assert st.m["x"][0] == pytest.approx(0.18) and st.v["x"][0] == pytest.approx(0.04 * 0.999)
    # zero moments and zero gradient leave the parameter exactly where it was
    p2, st2 = _scalar(1.5), AdamState.zeros(_scalar())
    adam_step(p2, {"x": np.zeros(1)}, st2, cfg)
    assert p2.arrays["x"][0] == 1.5


def test_adam_first_step_is_minus_lr():
    p, cfg = _scalar(), from_dict(None)
    st = AdamState.zeros(p)
    adam_step(p, {"x": np.ones(1)}, st, cfg)
    # m_hat = 1, v_hat = 1: step = -lr / (1 + eps)
    assert p.arrays["x"][0] == pytest.approx(-cfg.lr / (1 + cfg.adam_eps), rel=1e-12)
    assert st.t == 1


def test_adam_constant_gradient_steps():
    p, cfg = _scalar(), from_dict(None)
    st = AdamState.zeros(p)
    for _ in range(5):
        adam_step(p, {"x": np.ones(1)}, st, cfg)
    assert p.arrays["x"][0] == pytest.approx(-5 * cfg.lr, rel=1e-6)


def test_adam_nonfinite_names_slot():
    p = ModelParams({"good": np.zeros(2), "bad.slot": np.zeros(2)})
    st = AdamState.zeros(p)
    with pytest.raises(TrainingError, match="bad.slot"):
        adam_step(p, {"good": np.ones(2), "bad.slot": np.array([1.0, np.nan])}, st, from_dict(None))
    assert st.t == 0 and not p.arrays["good"].any()


def test_train_one_epoch_smoke():
    man, samples = tiny_dataset(subjects=1, per=4)
    arr = SampleArrays.from_samples(samples, man.modalities)
    _, hist = train_fold(man, arr, tiny_config(epochs=1), make_rng(0))
    assert len(hist) == 1 and all(np.isfinite(v) for v in hist[0].values())


def test_short_trailing_batch_dropped():
    man, samples = tiny_dataset(subjects=1, per=9)
    arr = SampleArrays.from_samples(samples, man.modalities)
    tr = Trainer(man, tiny_config(), arr, make_rng(0))
    assert list(tr.batch_starts()) == [0, 4]
    tr.run(1)
    assert tr.adam.t == 2


def test_batch_of_one_rejected():
    man, samples = tiny_dataset(subjects=1, per=1)
    arr = SampleArrays.from_samples(samples, man.modalities)
    with pytest.raises(ContractError):
        Trainer(man, tiny_config(), arr, make_rng(0)).step()


def test_training_progress(tiny):
    man, _, arr = tiny
    _, hist = train_fold(man, arr, tiny_config(epochs=50), make_rng(0))
    assert hist[-1]["task"] < hist[0]["task"]


def test_no_aux_losses_total_equals_task(tiny):
    man, _, arr = tiny
    cfg = apply_overrides(tiny_config(epochs=3), ["ablate.prd=off", "ablate.pcl=off"])
    _, hist = train_fold(man, arr, cfg, make_rng(0))
    assert [h["total"] for h in hist] == [h["task"] for h in hist]


def test_determinism(tiny):
    man, _, arr = tiny
    a = train_fold(man, arr, tiny_config(epochs=3), make_rng(5))
    b = train_fold(man, arr, tiny_config(epochs=3), make_rng(5))
    assert a[1] == b[1]
    assert all(np.array_equal(a[0].arrays[k], b[0].arrays[k]) for k in a[0].arrays)


@pytest.mark.parametrize("steps", [6, 7])
def test_checkpoint_resume_bit_identical(tiny, tmp_path, steps):
    # 6 steps is an epoch boundary (6 batches per epoch), 7 is mid-epoch
    man, _, arr = tiny
    cfg = tiny_config(epochs=3)
    ref = Trainer(man, cfg, arr, make_rng(2))
    for _ in range(steps):
        ref.step()
    ref.save(tmp_path / "ck")
    expected = ref.step()
    resumed = Trainer.load(tmp_path / "ck", man, arr)
    assert resumed.step() == expected
    assert all(np.array_equal(resumed.params.arrays[k], ref.params.arrays[k]) for k in ref.params.arrays)
    assert all(np.array_equal(resumed.adam.v[k], ref.adam.v[k]) for k in ref.params.arrays)
    ref.run()
    resumed.run()
    assert ref.history == resumed.history


def test_checkpoint_format(tmp_path):
    blocks = [("a", np.arange(6.0).reshape(2, 3)), ("b", np.array(2.5))]
    write_checkpoint(tmp_path / "c", {"k": 1}, blocks)
    raw = (tmp_path / "c").read_bytes()
    assert raw[:8] == b"MPCLCKPT" and np.arange(6.0).astype("<f8").tobytes() in raw
    meta, out = read_checkpoint(tmp_path / "c")
    assert meta == {"k": 1} and out["a"].shape == (2, 3) and out["b"].shape == () and float(out["b"]) == 2.5
    assert [p.name for p in tmp_path.iterdir()] == ["c"]
    (tmp_path / "bad").write_bytes(b"nope")
    with pytest.raises(ContractError):
        read_checkpoint(tmp_path / "bad")


def test_evaluate_zero_classifier_is_uniform(tiny):
    man, _, arr = tiny
    cfg = tiny_config()
    params = init_params(man, cfg, make_rng(0))
    params.arrays["head.w"][:] = 0.0
    r = evaluate(params, man, cfg, arr)
    assert r == uniform_report(arr.labels)
    assert r == metric_suite(np.full(arr.labels.shape, 0.25), arr.labels)
    assert evaluate(params, man, cfg, arr) == r


def test_evaluate_overfit_toy():
    man, samples = tiny_dataset(subjects=1, per=8)
    arr = SampleArrays.from_samples(samples, man.modalities)
    cfg = tiny_config(epochs=200, lr=0.01)
    params, _ = train_fold(man, arr, cfg, make_rng(0))
    assert evaluate(params, man, cfg, arr).kl < 0.01


def test_run_protocol_loso_and_artifacts(tmp_path):
    man, samples = tiny_dataset(subjects=3, per=6)
    plan = make_splits(samples, "loso", 0)
    res = run_protocol(man, samples, plan, tiny_config(), out_dir=tmp_path)
    assert len(res.folds) == 3
    mean = MetricReport.mean_of([f.report for f in res.folds])
    assert res.mean == mean and res.mean.kl == pytest.approx(np.mean([f.report.kl for f in res.folds]))
    run = res.run_dir
    assert run.name == f"run.{res.hash}"
    for name in ("config", "metrics", "history", "label_correlation", "protocol"):
        assert (run / name).is_file()
    for k in range(3):
        assert MetricReport.from_text((run / f"fold-{k}" / "metrics").read_text()) == res.folds[k].report
    grid = np.loadtxt(run / "label_correlation", ndmin=2)
    assert grid.shape == (4, 4)
    assert len((run / "history").read_text().splitlines()) == 1 + 3 * 2


def test_run_protocol_dep_two_subjects():
    man, samples = tiny_dataset(subjects=2, per=10)
    res = run_protocol(man, samples, make_splits(samples, "dep", 0), tiny_config())
    assert len(res.folds) == 2 and res.mean.count == 4


def test_run_protocol_jobs_identical():
    man, samples = tiny_dataset(subjects=2, per=6)
    plan = make_splits(samples, "loso", 0)
    a = run_protocol(man, samples, plan, tiny_config())
    b = run_protocol(man, samples, plan, tiny_config(), jobs=2)
    assert a.mean == b.mean and [f.history for f in a.folds] == [f.history for f in b.folds]


def test_fold_rng_independent_streams():
    assert fold_rng(0, 1).random() != fold_rng(0, 2).random()
    assert fold_rng(3, 1).random() == fold_rng(3, 1).random()
