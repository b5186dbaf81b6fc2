import sys

import pytest

from mpcl.config import from_dict
from mpcl.data import GeneratorSpec, SampleArrays, generate_synthetic
from mpcl.msaf import ModalityConfig
from mpcl.numeric import make_rng

TINY_MODALITIES = [ModalityConfig("eeg", 6, 1, "primary"), ModalityConfig("gsr", 3, 1, "auxiliary"),
                   ModalityConfig("ppg", 3, 1, "auxiliary"), ModalityConfig("face", 5, 1, "behavioral")]


def tiny_config(**extra):
    data = {"batch_size": 4, "epochs": 2,
            "model": {"dim": 8, "seq_len": 2, "prototypes": 6, "blocks": 2, "heads": 2}}
    for k, v in extra.items():
        if isinstance(v, dict):
            data.setdefault(k, {}).update(v)
        else:
            data[k] = v
    return from_dict(data)


def tiny_dataset(subjects=3, per=8, seed=0):
    spec = GeneratorSpec(n_positive=2, n_negative=2, subjects=subjects, samples_per_subject=per,
                         modalities=list(TINY_MODALITIES))
    return generate_synthetic(spec, make_rng(seed), name="tiny")


@pytest.fixture
def tiny():
    man, samples = tiny_dataset()
    return man, samples, SampleArrays.from_samples(samples, man.modalities)


@pytest.fixture(scope="session")
def desk_dataset():
    return generate_synthetic(GeneratorSpec(), make_rng(0))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
