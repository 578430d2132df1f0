import numpy as np
import pytest

from lifelong_reid import data
from lifelong_reid.data import DomainSpec, generate_domain, load_dataset, save_dataset
from lifelong_reid.errors import DataError, FormatError, ParameterError
from lifelong_reid.stats import fit_stats, w2_distance


def small(name="d", seed=1, **kw):
    return DomainSpec(name, seed, **{"num_identities": 20, "samples_per_identity": 8, **kw})


def test_same_spec_gives_byte_identical_files(tmp_path):
    save_dataset(generate_domain(small()), tmp_path / "a")
    save_dataset(generate_domain(small()), tmp_path / "b")
    for f in ("features.bin", "meta.csv"):
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()


def test_zero_noise_collapses_identity_camera_groups():
    ds = generate_domain(small(noise_std=0.0))
    for pid in np.unique(ds.ids):
        for cam in np.unique(ds.cams):
            rows = ds.features[(ds.ids == pid) & (ds.cams == cam)]
            assert np.all(rows == rows[0])


def test_gap_seeds_separate_domains():
    """Cross-domain W2 dwarfs the split-half W2 within a domain."""
    a = generate_domain(small("a", 11, num_identities=60, samples_per_identity=20))
    b = generate_domain(small("b", 12, num_identities=60, samples_per_identity=20))
    half = np.random.default_rng(0).permutation(len(a)) < len(a) // 2
    within = w2_distance(fit_stats(a.features[half]), fit_stats(a.features[~half]))
    across = w2_distance(fit_stats(a.features), fit_stats(b.features))
    assert across > 10 * within


def test_split_protocol():
    ds = generate_domain(small(num_identities=30))
    train, query, gallery = (set(ds.part(s).ids.tolist()) for s in data.SPLITS)
    assert query == gallery and not (train & query)
    assert len(query) == 6
    for pid in query:
        qc = set(ds.cams[(ds.ids == pid) & (ds.split == "query")].tolist())
        gc = set(ds.cams[(ds.ids == pid) & (ds.split == "gallery")].tolist())
        assert len(qc) == 1 and gc and not (qc & gc)


def test_base_domain_is_all_train():
    ds = generate_domain(small(role="base"))
    assert set(ds.split.tolist()) == {"train"}


def test_sequence_identities_are_globally_unique():
    specs = data.default_specs(seed=4, seen=3, unseen=1, base_ids=10, num_identities=8,
                               samples_per_identity=4)
    dsets = data.generate_sequence(specs)
    data.check_disjoint(dsets)
    assert sum(len(np.unique(d.ids)) for d in dsets) == 10 + 4 * 8
    with pytest.raises(DataError):
        data.check_disjoint([dsets[1], dsets[1]])


def test_round_trip(tmp_path):
    ds = generate_domain(small())
    save_dataset(ds, tmp_path)
    back = load_dataset(tmp_path, "d")
    assert back.features.tobytes() == ds.features.tobytes()
    for f in ("ids", "cams", "split"):
        np.testing.assert_array_equal(getattr(back, f), getattr(ds, f))


def test_corpus_round_trip(tmp_path):
    specs = data.default_specs(seed=2, seen=2, unseen=1, base_ids=6, num_identities=6,
                               samples_per_identity=4, shared=0.5)
    dsets = data.generate_sequence(specs)
    data.save_corpus(dsets, specs, tmp_path)
    specs2, loaded = data.load_corpus(tmp_path)
    assert specs2 == specs
    assert [d.features.tobytes() for d in dsets] == [loaded[s.name].features.tobytes() for s in specs]


@pytest.mark.parametrize("damage", ["truncate", "magic", "version", "meta_rows"])
def test_corrupt_files_are_rejected(tmp_path, damage):
    save_dataset(generate_domain(small()), tmp_path)
    fb, meta = tmp_path / "features.bin", tmp_path / "meta.csv"
    raw = bytearray(fb.read_bytes())
    if damage == "truncate":
        fb.write_bytes(bytes(raw[:-4]))
    elif damage == "magic":
        raw[:8] = b"XXXXXXXX"
        fb.write_bytes(bytes(raw))
    elif damage == "version":
        raw[8] = 9
        fb.write_bytes(bytes(raw))
    else:
        meta.write_text("\n".join(meta.read_text().splitlines()[:-1]) + "\n")
    with pytest.raises(FormatError):
        load_dataset(tmp_path)


def test_spec_validation():
    with pytest.raises(ParameterError):
        small(cameras=1).validate()
    with pytest.raises(ParameterError):
        small(samples_per_identity=3).validate()
    with pytest.raises(ParameterError):
        small(shared=1.5).validate()
    with pytest.raises(ParameterError):
        small(blend_seeds=(1, 2), blend_weights=(1.0,)).validate()


def test_inseparable_generation_aborts():
    with pytest.raises(DataError):
        generate_domain(small(camera_std=5.0))


def test_blended_domain_sits_between_parents():
    parents = [small(f"p{i}", s, num_identities=40, samples_per_identity=10)
               for i, s in enumerate((21, 22, 23))]
    blend = small("u", 99, num_identities=40, samples_per_identity=10, blend_seeds=(21, 22, 23),
                  blend_weights=(1 / 3,) * 3)
    other = small("o", 77, num_identities=40, samples_per_identity=10)
    st = {s.name: fit_stats(generate_domain(s).features) for s in parents + [blend, other]}
    to_parents = [w2_distance(st["u"], st[p.name]) for p in parents]
    assert max(to_parents) < min(w2_distance(st["o"], st[p.name]) for p in parents)


def test_shared_structure_brings_domains_closer():
    def gap(shared):
        kw = dict(num_identities=40, samples_per_identity=10, shared=shared, family_seed=5)
        a, b = generate_domain(small("a", 31, **kw)), generate_domain(small("b", 32, **kw))
        return w2_distance(fit_stats(a.features), fit_stats(b.features))
    assert gap(0.95) < gap(0.5) < gap(0.0)
