import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifelong_reid import training as tr
from lifelong_reid.data import DomainSpec, generate_domain
from lifelong_reid.encoder import Encoder, EncoderConfig
from lifelong_reid.errors import DataError, LabelError, ParameterError, SamplerError
from lifelong_reid.numerics import autodiff as T
from lifelong_reid.numerics.gradcheck import check_gradients

SMALL = EncoderConfig(blocks=2, d_model=16, heads=2, ffn_dim=32)


def triplet_value(feats, labels, margin):
    return float(tr.batch_hard_triplet(T.Tensor(np.asarray(feats, dtype=np.float64)), labels,
                                       margin).data)


def test_triplet_zero_margin_clustered():
    feats = [[0, 0], [0, 0.1], [5, 5], [5, 5.1]]
    assert triplet_value(feats, np.array([0, 0, 1, 1]), 0.0) == 0.0


def test_triplet_hand_batch():
    # points on a line: a0=0, a1=1 (id 0), b0=3, b1=6 (id 1)
    feats = [[0.0], [1.0], [3.0], [6.0]]
    # anchor 0: pos 1, neg 3 -> 0.5+1-3 < 0 -> 0
    # anchor 1: pos 1, neg 2 -> 0.5+1-2 = -0.5 -> 0
    # anchor 3 (b0): pos 3, neg 2 -> 0.5+3-2 = 1.5
    # anchor 6 (b1): pos 3, neg 5 -> 0.5+3-5 -> 0
    expected = (0 + 0 + 1.5 + 0) / 4
    assert triplet_value(feats, np.array([0, 0, 1, 1]), 0.5) == pytest.approx(expected, abs=1e-9)


def exhaustive_hard_triplet(f, labels, margin):
    """Every (anchor, positive, negative) triple; per anchor the worst violation."""
    n = len(labels)
    d = lambda i, j: np.sqrt(((f[i] - f[j]) ** 2).sum() + tr.NORM_EPS)  # noqa: E731
    total = 0.0
    for a in range(n):
        worst = -np.inf
        for p, q in itertools.product(range(n), range(n)):
            if p != a and labels[p] == labels[a] and labels[q] != labels[a]:
                worst = max(worst, margin + d(a, p) - d(a, q))
        total += max(0.0, worst)
    return total / n


@settings(max_examples=60, deadline=None)
@given(n_ids=st.integers(2, 4), k=st.integers(2, 4), dim=st.integers(1, 5),
       margin=st.floats(0.0, 2.0), seed=st.integers(0, 2 ** 31))
def test_triplet_matches_exhaustive_oracle(n_ids, k, dim, margin, seed):
    rng = np.random.default_rng(seed)
    labels = np.repeat(np.arange(n_ids), k)
    f = rng.standard_normal((len(labels), dim))
    assert triplet_value(f, labels, margin) == pytest.approx(
        exhaustive_hard_triplet(f, labels, margin), abs=1e-9)


def test_triplet_needs_positives_and_negatives():
    with pytest.raises(SamplerError):
        triplet_value([[0.0], [1.0]], np.array([0, 1]), 0.3)
    with pytest.raises(SamplerError):
        triplet_value([[0.0], [1.0]], np.array([0, 0]), 0.3)


def test_pk_sample_cases():
    labels = np.array([0, 0, 1, 1])
    idx = tr.pk_sample(labels, 2, 2, np.random.default_rng(0))
    assert sorted(idx.tolist()) == [0, 1, 2, 3]
    labels = np.repeat(np.arange(10), 6)
    a = tr.pk_sample(labels, 4, 3, np.random.default_rng(7))
    b = tr.pk_sample(labels, 4, 3, np.random.default_rng(7))
    np.testing.assert_array_equal(a, b)
    counts = np.unique(labels[a], return_counts=True)[1]
    assert counts.tolist() == [3, 3, 3, 3]
    with pytest.raises(SamplerError):
        tr.pk_sample(labels, 11, 2, np.random.default_rng(0))
    with pytest.raises(SamplerError):
        tr.pk_sample(labels, 2, 7, np.random.default_rng(0))


def test_local_labels():
    classes = np.array([3, 7, 9])
    np.testing.assert_array_equal(tr.local_labels(np.array([9, 3]), classes), [2, 0])
    with pytest.raises(LabelError):
        tr.local_labels(np.array([4]), classes)


def test_prototype_loss_gradients():
    rng = np.random.default_rng(0)
    f = T.Tensor(rng.standard_normal((6, 5)))
    labels = np.array([0, 0, 1, 1, 2, 2])
    params = {"p": rng.standard_normal((3, 5)), "tau": np.array([0.3])}
    for fn in (tr.i2t_loss, tr.t2i_loss):
        errs = check_gradients(lambda t: fn(f, t["p"], t["tau"], labels), params, step=1e-5)
        assert max(errs.values()) < 1e-4


def test_singleton_identity():
    rng = np.random.default_rng(0)
    feats = rng.standard_normal((6, 4)) + np.array([3.0, 0, 0, 0])
    entry = tr.stage1_train_prototypes(feats, np.full(6, 5), tr.TrainConfig(), rng)
    mean_dir = feats.mean(0) / np.linalg.norm(feats.mean(0))
    np.testing.assert_allclose(entry.protos[0], mean_dir, atol=1e-6)
    one = T.Tensor(entry.protos[:1].astype(np.float64))
    assert float(tr.i2t_loss(T.Tensor(feats), one, T.Tensor(np.array([0.07])),
                             np.zeros(6, dtype=int)).data) == 0.0


def test_separable_clusters_are_classified():
    rng = np.random.default_rng(1)
    centers = np.array([[4.0, 0, 0], [0, 4.0, 0]])
    labels = np.repeat([10, 20], 12)
    feats = centers[np.repeat([0, 1], 12)] + rng.standard_normal((24, 3)) * 0.5
    cfg = tr.TrainConfig(stage1_iters=50, p_ids=2, k_instances=4)
    entry = tr.stage1_train_prototypes(feats, labels, cfg, rng)
    assert tr.prototype_accuracy(feats, labels, entry) == 1.0
    assert entry.temp[0] >= tr.TEMP_FLOOR


@pytest.fixture(scope="module")
def pretrained():
    base = generate_domain(DomainSpec("base", 1, num_identities=20, role="base"))
    enc = Encoder(SMALL, seed=2)
    cfg = tr.TrainConfig(pretrain_iters=150)
    rows = []
    head = tr.pretrain_base(enc, base, cfg, np.random.default_rng(0), rows)
    return enc, base, head, rows


def test_pretrain_beats_chance(pretrained):
    enc, base, head, _ = pretrained
    assert tr.classification_accuracy(enc, base, head) >= 5 * (1 / 20)
    assert enc.frozen


def test_pretrain_is_deterministic(pretrained):
    enc, base, _, _ = pretrained
    again = Encoder(SMALL, seed=2)
    tr.pretrain_base(again, base, tr.TrainConfig(pretrain_iters=150), np.random.default_rng(0))
    for (n, a), (_, b) in zip(enc.base_parameters().items(), again.base_parameters().items()):
        assert a.tobytes() == b.tobytes(), n


def test_pretrain_trains_every_base_tensor():
    base = generate_domain(DomainSpec("base", 1, num_identities=20, role="base"))
    enc = Encoder(SMALL, seed=2)
    before = {n: a.copy() for n, a in enc.base_parameters().items()}
    tr.pretrain_base(enc, base, tr.TrainConfig(pretrain_iters=3), np.random.default_rng(0))
    unchanged = [n for n, a in enc.base_parameters().items() if np.array_equal(a, before[n])]
    assert not unchanged


def test_pretrain_empty_data():
    base = generate_domain(DomainSpec("base", 1, num_identities=4, role="base"))
    with pytest.raises(DataError):
        tr.pretrain_base(Encoder(SMALL), base.subset(np.zeros(len(base), bool)), tr.TrainConfig(),
                         np.random.default_rng(0))


def test_stage_separation_and_frozen_base(pretrained):
    enc, _, _, _ = pretrained
    enc = enc.copy()
    domain = generate_domain(DomainSpec("d", 5, num_identities=12)).part("train")
    enc.add_adapters(4, 16.0, seed=0)
    enc.add_adapters(4, 16.0, seed=1)
    old = {n: a.copy() for n, a in enc.adapter_parameters(step=0).items()}
    base = {n: a.tobytes() for n, a in enc.base_parameters().items()}
    mix = np.full((2, 2), 0.5)
    cfg = tr.TrainConfig(stage1_iters=10, stage2_iters=10, p_ids=4)
    rng = np.random.default_rng(0)

    before_s1 = {n: a.copy() for n, a in enc.parameters().items()}
    entry = tr.stage1_train_prototypes(enc.encode(domain.features, mix), domain.ids, cfg, rng)
    for n, a in enc.parameters().items():
        np.testing.assert_array_equal(a, before_s1[n])

    protos, temp = entry.protos.copy(), entry.temp.copy()
    newest = frozenset(enc.adapter_parameters(step=1))
    tr.stage2_train(enc, domain, mix, newest, entry, cfg, rng, cfg.stage2_lr)
    np.testing.assert_array_equal(entry.protos, protos)
    np.testing.assert_array_equal(entry.temp, temp)
    for n, a in enc.adapter_parameters(step=0).items():
        np.testing.assert_array_equal(a, old[n])
    for n, a in enc.base_parameters().items():
        assert a.tobytes() == base[n], n
    assert any(np.any(a) for n, a in enc.adapter_parameters(step=1).items() if n.endswith("up"))
    with pytest.raises(ParameterError):
        tr.stage2_train(enc, domain, mix, frozenset(["0.q.base.w"]), entry, cfg, rng, 1e-3)


def test_losses_decrease(pretrained):
    enc, _, _, rows = pretrained
    totals = np.array([r["total"] for r in rows])
    smooth = np.convolve(totals, np.ones(10) / 10, mode="valid")
    assert smooth[-1] < smooth[0]

    enc = enc.copy()
    domain = generate_domain(DomainSpec("d", 6, num_identities=12)).part("train")
    enc.add_adapters(4, 16.0, seed=0)
    mix = np.ones((2, 1))
    cfg = tr.TrainConfig(stage2_iters=60, p_ids=4)  # default-length stage 1
    rng = np.random.default_rng(0)
    log = []
    entry = tr.stage1_train_prototypes(enc.encode(domain.features, mix), domain.ids, cfg, rng, log, 1)
    tr.stage2_train(enc, domain, mix, frozenset(enc.adapter_parameters(step=0)), entry, cfg, rng,
                    cfg.stage2_lr, log, 1)
    for stage in (1, 2):
        t = np.array([r["total"] for r in log if r["stage"] == stage])
        s = np.convolve(t, np.ones(10) / 10, mode="valid")
        assert s[-1] < s[0], stage


def test_train_config_validation():
    with pytest.raises(ParameterError):
        tr.TrainConfig(margin=-1.0)
    with pytest.raises(ParameterError):
        tr.TrainConfig(k_instances=1)
    assert tr.TrainConfig().batch_size == 32
