import numpy as np
import pytest

from conftest import tiny_config
from mpcl.config import apply_overrides
from mpcl.model import as_tensors, forward, init_params, schedule_for
from mpcl.numeric import grad_check, make_rng


def _forward(man, cfg, batch, seed=0):
    params = init_params(man, cfg, make_rng(seed))
    return params, forward(as_tensors(params), man, cfg, batch)


def test_slot_layout(tiny):
    man, _, _ = tiny
    cfg = tiny_config()
    p = init_params(man, cfg, make_rng(0))
    assert p.arrays["enc.face.w2"].shape == (8, 2 * 2 * 8)  # K = 2 aux x 2 rows
    assert p.arrays["enc.eeg.w2"].shape == (8, 2 * 8)
    assert p.arrays["fuse.gsr.w_proj"].shape == (3 * 8, 8)
    assert np.array_equal(p.arrays["hsc.0.content"], p.arrays["bank.phy.memory"])
    assert schedule_for(cfg, 4).capacities == (6, 4)
    assert not any(k.startswith("fuse.") for k in init_params(man, apply_overrides(cfg, ["ablate.msaf=off"]),
                                                                make_rng(0)).arrays)


def test_forward_shapes_and_simplex(tiny):
    man, _, arr = tiny
    _, res = _forward(man, tiny_config(), arr.take(np.arange(4)))
    assert res.y_hat.shape == (4, 4) and np.allclose(res.y_hat.sum(axis=1), 1.0, atol=1e-12)
    total = float(res.task.data) + float(res.prd.data) + float(res.semloob.data)
    assert float(res.total.data) == pytest.approx(total, abs=1e-12)


def test_without_aux_losses_total_is_task(tiny):
    man, _, arr = tiny
    cfg = apply_overrides(tiny_config(), ["ablate.prd=off", "ablate.pcl=off"])
    _, res = _forward(man, cfg, arr.take(np.arange(4)))
    assert float(res.total.data) == float(res.task.data)
    assert float(res.prd.data) == 0.0 and float(res.semloob.data) == 0.0


def test_each_ablation_runs(tiny):
    man, _, arr = tiny
    for module in ("msaf", "prd", "pcl", "hsc"):
        cfg = apply_overrides(tiny_config(), [f"ablate.{module}=off"])
        _, res = _forward(man, cfg, arr.take(np.arange(4)))
        assert np.isfinite(float(res.total.data))


def test_zero_head_predicts_uniform(tiny):
    man, _, arr = tiny
    cfg = tiny_config()
    params = init_params(man, cfg, make_rng(0))
    params.arrays["head.w"][:] = 0.0
    res = forward(as_tensors(params), man, cfg, arr.take(np.arange(4)))
    assert np.allclose(res.y_hat, 0.25, atol=1e-15)


@pytest.mark.parametrize("ablate", [[], ["ablate.msaf=off"], ["ablate.hsc=off"]])
def test_gradcheck_full_objective_tiny(tiny, ablate):
    # every coordinate of every slot on a 4-sample batch
    man, _, arr = tiny
    cfg = apply_overrides(tiny_config(), ablate)
    batch = arr.take(np.arange(4))
    params = init_params(man, cfg, make_rng(1))
    base = forward(as_tensors(params), man, cfg, batch)
    rep = grad_check(lambda t: forward(t, man, cfg, batch, frozen=base.detached).total, params.arrays)
    assert rep.passed, "\n".join(rep.lines())
    assert [s.name for s in rep.slots] == list(params.arrays)
