"""End-to-end recipes shared by the CLI and the acceptance suite."""
import logging
import time

import numpy as np

from . import lifelong
from .evaluation import forgetting_report

log = logging.getLogger(__name__)


def split_roles(specs, datasets):
    base = [datasets[s.name] for s in specs if s.role == "base"]
    seen = [datasets[s.name] for s in specs if s.role == "seen"]
    unseen = [datasets[s.name] for s in specs if s.role == "unseen"]
    if len(base) != 1:
        raise ValueError("corpus must contain exactly one base domain")
    return base[0], seen, unseen


def train_lifelong(encoder_cfg, method, train_cfg, base, seen, unseen=(), eval_modes=("scheduled",
                   "self"), checkpoint_cb=None):
    """Pretrain the base, run every seen domain, evaluate after each step.

    Returns ``(state, history)``; ``history[mode]`` is a list (one per step)
    of ``{domain: (mAP, rank1)}`` over the domains seen so far, and
    ``history["final"][mode]`` the last-step :class:`EvalReport`.
    """
    state = lifelong.new_state(encoder_cfg, method, train_cfg)
    t0 = time.perf_counter()
    lifelong.pretrain(state, base)
    log.info("base pretrained in %.1fs", time.perf_counter() - t0)
    history = {mode: [] for mode in eval_modes}
    for k, ds in enumerate(seen):
        t0 = time.perf_counter()
        lifelong.run_step(state, ds)
        for mode in eval_modes:
            rep = lifelong.evaluate(state, seen[:k + 1], mode=mode)
            history[mode].append(dict(rep.seen))
        log.info("step %d (%s) done in %.1fs", k + 1, ds.name, time.perf_counter() - t0)
        if checkpoint_cb is not None:
            checkpoint_cb(state, k + 1)
    history["final"] = {mode: lifelong.evaluate(state, seen, unseen, mode=mode)
                        for mode in eval_modes}
    return state, history


def train_baseline(pretrained_encoder, train_cfg, seen, unseen=(), seed=0, log_rows=None):
    """Sequential full fine-tuning from the same pretrained base."""
    enc = lifelong.unfrozen_copy(pretrained_encoder)
    history = []
    for k, ds in enumerate(seen):
        lifelong.baseline_step(enc, ds, train_cfg, seed, k, log_rows)
        history.append(lifelong.score_plain(enc, seen[:k + 1]))
    final = {"seen": lifelong.score_plain(enc, seen), "unseen": lifelong.score_plain(enc, unseen)}
    return enc, history, final


def seen_average(scores, metric=0):
    return float(np.mean([v[metric] for v in scores.values()]))


def drops(history, metric=0):
    return {k: v["drop"] for k, v in forgetting_report(history, metric).items()}
