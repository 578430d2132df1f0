import numpy as np
import pytest

from lifelong_reid import _pykernels, data, experiments, kernels, lifelong
from lifelong_reid.encoder import EncoderConfig
from lifelong_reid.selector import ScheduleConfig
from lifelong_reid.training import TrainConfig

BACKENDS = ["python"] + (["compiled"] if kernels.compiled_kernels is not None else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Run the test once per available kernel backend."""
    mod = _pykernels if request.param == "python" else kernels.compiled_kernels
    monkeypatch.setattr(kernels, "jacobi_eigh", mod.jacobi_eigh)
    monkeypatch.setattr(kernels, "ranked_ap", mod.ranked_ap)
    return request.param


def random_spd(rng, n, jitter=1e-3):
    b = rng.standard_normal((n, n + 2))
    return b @ b.T / n + jitter * np.eye(n)


TINY_ENCODER = EncoderConfig(blocks=2, d_model=16, heads=2, ffn_dim=32)
TINY_TRAIN = TrainConfig(stage1_iters=10, stage2_iters=15, pretrain_iters=40, p_ids=4,
                         k_instances=4)
TINY_METHOD = lifelong.MethodConfig(rank=4, alpha=16.0, seed=3,
                                     schedule=ScheduleConfig(total_layers=2))


def tiny_specs(seed=3, seen=3):
    return data.default_specs(seed=seed, seen=seen, unseen=1, base_ids=30,
                              num_identities=15, samples_per_identity=12)


@pytest.fixture(scope="session")
def tiny_corpus():
    specs = tiny_specs()
    dsets = data.generate_sequence(specs)
    return experiments.split_roles(specs, {d.name: d for d in dsets})


@pytest.fixture(scope="session")
def tiny_run(tiny_corpus):
    """A 3-step lifelong run on the tiny corpus, with per-step snapshots."""
    base, seen, unseen = tiny_corpus
    state = lifelong.new_state(TINY_ENCODER, TINY_METHOD, TINY_TRAIN)
    lifelong.pretrain(state, base)
    snapshots = [state.encoder.copy()]
    for ds in seen:
        lifelong.run_step(state, ds)
        snapshots.append(state.encoder.copy())
    return state, snapshots


def pytest_terminal_summary(terminalreporter):
    from . import test_acceptance
    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(test_acceptance.VERDICTS):
            terminalreporter.write_line(test_acceptance.VERDICTS[n])
