"""Retrieval scoring (mAP, Rank-1), score reports, and forgetting trajectories."""
import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels

log = logging.getLogger(__name__)


def _unit_rows(x):
    x = np.asarray(x, dtype=np.float64)
    n = np.linalg.norm(x, axis=1, keepdims=True)
    return x / np.where(n > 0, n, 1.0)


def rank_and_score(query_feats, gallery_feats, q_ids, q_cams, g_ids, g_cams):
    """Cosine-ranked retrieval with same-identity-same-camera exclusion.

    Returns ``(mAP, rank1, n_scored)``. Queries with no valid match are left
    out of both averages.
    """
    sim = _unit_rows(query_feats) @ _unit_rows(gallery_feats).T
    order = np.ascontiguousarray(np.argsort(-sim, axis=1, kind="stable"), dtype=np.int64)
    as64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)  # noqa: E731
    ap, top, nrel = kernels.ranked_ap(order, as64(q_ids), as64(q_cams), as64(g_ids), as64(g_cams))
    valid = np.asarray(nrel) > 0
    skipped = int((~valid).sum())
    if skipped:
        log.warning("%d queries have no valid gallery match and are excluded", skipped)
    if not valid.any():
        return 0.0, 0.0, 0
    return (float(np.asarray(ap)[valid].mean()), float(np.asarray(top)[valid].mean()),
            int(valid.sum()))


def score_dataset(features, ds):
    """mAP and Rank-1 of a domain's query split against its gallery split."""
    q = ds.split == "query"
    g = ds.split == "gallery"
    m, r1, _ = rank_and_score(features[q], features[g], ds.ids[q], ds.cams[q],
                              ds.ids[g], ds.cams[g])
    return m, r1


@dataclass
class EvalReport:
    seen: dict = field(default_factory=dict)      # name -> (mAP, rank1)
    unseen: dict = field(default_factory=dict)
    similarity: np.ndarray | None = None
    similarity_names: list = field(default_factory=list)

    @property
    def seen_average(self):
        if not self.seen:
            return (0.0, 0.0)
        vals = np.array(list(self.seen.values()))
        return float(vals[:, 0].mean()), float(vals[:, 1].mean())

    def rows(self, **extra):
        out = []
        for group, table in (("seen", self.seen), ("unseen", self.unseen)):
            for name, (m, r1) in table.items():
                out.append({**extra, "group": group, "domain": name, "mAP": m, "rank1": r1})
        if self.seen:
            m, r1 = self.seen_average
            out.append({**extra, "group": "seen", "domain": "seen_avg", "mAP": m, "rank1": r1})
        return out


def write_rows(path, rows):
    path = Path(path)
    if not rows:
        path.write_text("")
        return
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0].keys()), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def write_similarity(path, names, matrix):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["test_domain"] + list(names))
        for name, row in zip(names, matrix):
            w.writerow([name] + [f"{v:.6f}" for v in row])


def forgetting_report(per_step_scores, metric=0):
    """Per-domain score trajectories and peak-minus-final drop.

    ``per_step_scores`` is a list (one entry per lifelong step) of
    ``{domain: (mAP, rank1)}``; a domain's trajectory starts at the first
    step where it appears.
    """
    domains = []
    for scores in per_step_scores:
        for name in scores:
            if name not in domains:
                domains.append(name)
    report = {}
    for name in domains:
        steps = [k + 1 for k, s in enumerate(per_step_scores) if name in s]
        traj = [per_step_scores[k - 1][name][metric] for k in steps]
        report[name] = {"first_step": steps[0], "trajectory": traj,
                        "drop": max(traj) - traj[-1]}
    return report


def forgetting_rows(report, method="", metric="mAP"):
    rows = []
    for name, entry in report.items():
        for k, v in enumerate(entry["trajectory"]):
            rows.append({"method": method, "domain": name, "step": entry["first_step"] + k,
                         "metric": metric, "score": float(v), "drop": float(entry["drop"])})
    return rows


def render_table(report):
    lines = [f"{'domain':<12}{'mAP':>8}{'R-1':>8}"]
    for group, table in (("seen", report.seen), ("unseen", report.unseen)):
        for name, (m, r1) in table.items():
            lines.append(f"{name:<12}{100 * m:>8.1f}{100 * r1:>8.1f}")
        if group == "seen" and table:
            m, r1 = report.seen_average
            lines.append(f"{'seen-avg':<12}{100 * m:>8.1f}{100 * r1:>8.1f}")
    return "\n".join(lines)
