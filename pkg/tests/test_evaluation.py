import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lifelong_reid import evaluation as ev
from lifelong_reid.evaluation import EvalReport, forgetting_report, rank_and_score


def brute_force_ap(q, g, qid, qcam, gid, gcam):
    """Per-query AP and top-1 by explicit sorting of (score, index) pairs."""
    aps, tops = [], []
    for i in range(len(q)):
        keep = [j for j in range(len(g)) if not (gid[j] == qid[i] and gcam[j] == qcam[i])]
        cos = [float(np.dot(q[i], g[j]) / (np.linalg.norm(q[i]) * np.linalg.norm(g[j])))
               for j in keep]
        ranked = [keep[j] for j in sorted(range(len(keep)), key=lambda j: (-cos[j], keep[j]))]
        rel = [gid[j] == qid[i] for j in ranked]
        if not any(rel):
            continue
        hits, precs = 0, []
        for k, r in enumerate(rel, 1):
            if r:
                hits += 1
                precs.append(hits / k)
        aps.append(sum(precs) / len(precs))
        tops.append(float(rel[0]))
    if not aps:
        return 0.0, 0.0, 0
    return float(np.mean(aps)), float(np.mean(tops)), len(aps)


def random_instance(rng):
    n_g = int(rng.integers(1, 21))
    n_q = int(rng.integers(1, 6))
    dim = int(rng.integers(2, 6))
    n_id = int(rng.integers(1, 5))
    g = rng.standard_normal((n_g, dim))
    q = rng.standard_normal((n_q, dim))
    if rng.random() < 0.3:
        g[rng.integers(n_g)] = g[0]  # exact duplicate to exercise tie-breaking
    return (q, g, rng.integers(0, n_id, n_q), rng.integers(0, 3, n_q),
            rng.integers(0, n_id, n_g), rng.integers(0, 3, n_g))


def test_hand_case_ap(backend):
    # query id 0 cam 0; gallery cosine ranks items 0,1,2; item 0 is a distractor
    q = np.array([[1.0, 0.0]])
    g = np.array([[1.0, 0.01], [1.0, 0.2], [1.0, 0.5]])
    m, r1, n = rank_and_score(q, g, [0], [0], [1, 0, 0], [1, 1, 2])
    assert m == pytest.approx(0.58333333333, abs=1e-9) and r1 == 0.0 and n == 1


def test_perfect_retrieval(backend):
    rng = np.random.default_rng(0)
    centers = rng.standard_normal((5, 8)) * 10
    q = centers + rng.standard_normal((5, 8)) * 0.01
    g = np.repeat(centers, 3, axis=0) + rng.standard_normal((15, 8)) * 0.01
    m, r1, _ = rank_and_score(q, g, np.arange(5), np.zeros(5), np.repeat(np.arange(5), 3),
                              np.ones(15))
    assert m == 1.0 and r1 == 1.0


def test_matches_brute_force_oracle(backend):
    rng = np.random.default_rng(123)
    done = 0
    while done < 200:
        inst = random_instance(rng)
        want = brute_force_ap(*inst)
        if want[2] == 0:
            continue
        got = rank_and_score(*inst)
        assert got[0] == pytest.approx(want[0], abs=1e-12)
        assert got[1] == want[1] and got[2] == want[2]
        done += 1


def test_same_camera_same_identity_is_excluded(backend):
    q = np.array([[1.0, 0.0]])
    g = np.array([[1.0, 0.0], [0.0, 1.0], [0.7, 0.7]])
    # the identical gallery item shares id and camera with the query, so it is ignored
    m, r1, _ = rank_and_score(q, g, [3], [1], [3, 3, 4], [1, 2, 2])
    assert r1 == 0.0 and m == pytest.approx(0.5)


def test_queries_without_matches_are_dropped(caplog):
    q = np.eye(2)
    g = np.array([[1.0, 0.0], [0.0, 1.0]])
    m, r1, n = rank_and_score(q, g, [0, 9], [0, 0], [0, 0], [1, 1])
    assert n == 1 and m == 1.0 and r1 == 1.0
    assert "1 queries" in caplog.text
    assert rank_and_score(q, g, [7, 9], [0, 0], [0, 0], [1, 1]) == (0.0, 0.0, 0)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 2 ** 31), scale=st.floats(1e-3, 1e3))
def test_orthogonal_and_scale_invariance(seed, scale):
    rng = np.random.default_rng(seed)
    q, g, qid, qcam, gid, gcam = random_instance(rng)
    if brute_force_ap(q, g, qid, qcam, gid, gcam)[2] == 0:
        return
    base = rank_and_score(q, g, qid, qcam, gid, gcam)
    rot, _ = np.linalg.qr(rng.standard_normal((q.shape[1],) * 2))
    turned = rank_and_score(q @ rot, g @ rot, qid, qcam, gid, gcam)
    assert turned[0] == pytest.approx(base[0], abs=1e-9) and turned[1] == pytest.approx(base[1])
    assert rank_and_score(q * scale, g * scale, qid, qcam, gid, gcam) == base


def test_report_average_matches_entries():
    rep = EvalReport(seen={"a": (0.5, 0.6), "b": (0.25, 1.0)}, unseen={"u": (0.1, 0.0)})
    assert rep.seen_average == pytest.approx((0.375, 0.8), abs=1e-12)
    rows = rep.rows(step=2)
    assert rows[-1]["domain"] == "seen_avg" and len(rows) == 4
    assert "seen-avg" in ev.render_table(rep)


def test_forgetting_report():
    single = forgetting_report([{"a": (0.7, 0.8)}])
    assert single["a"]["trajectory"] == [0.7] and single["a"]["drop"] == 0.0
    hist = [{"a": (0.8, 0.9)}, {"a": (0.6, 0.9), "b": (0.5, 0.5)}, {"a": (0.7, 0.8), "b": (0.5, 0.4)}]
    rep = forgetting_report(hist)
    assert rep["a"]["trajectory"] == [0.8, 0.6, 0.7]
    assert rep["a"]["drop"] == pytest.approx(0.1)
    assert rep["b"]["first_step"] == 2 and rep["b"]["drop"] == 0.0
    assert forgetting_report(hist, metric=1)["b"]["drop"] == pytest.approx(0.1)
    rows = ev.forgetting_rows(rep, method="m")
    assert [r["step"] for r in rows if r["domain"] == "b"] == [2, 3]


def test_csv_writers(tmp_path):
    ev.write_rows(tmp_path / "s.csv", [{"domain": "a", "mAP": 0.5}])
    assert (tmp_path / "s.csv").read_text() == "domain,mAP\na,0.500000\n"
    ev.write_similarity(tmp_path / "m.csv", ["a", "b"], np.array([[0.9, 0.1], [0.2, 0.8]]))
    assert (tmp_path / "m.csv").read_text().splitlines()[0] == "test_domain,a,b"
