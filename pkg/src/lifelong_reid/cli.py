"""Command-line entry point: ``lifelong-reid <verb> [flags]``.

Verbs: gen-data, train, eval, similarity, ablate, storage-report, gradcheck,
baseline. Every verb writes ``config.resolved.json`` next to its outputs
(when it has an output directory) and exits nonzero with a categorized
message on failure.
"""
import argparse
import dataclasses
import logging
import os
import sys
from pathlib import Path

log = logging.getLogger("lifelong_reid")

EXIT_MISSING_FILE = 3
ABLATION_AXES = ("temperature-family", "a-b-grid", "rank-alpha", "sites", "stats-samples",
                 "fixed-temperature")
A_GRID = (0.1, 0.5, 1.0, 2.0)
B_GRID = (0.05, 0.1, 0.5)
FIXED_TAUS = (0.05, 0.1, 0.5, 1.0, 2.0, 5.0, 1000.0)
STATS_SAMPLES = (2, 4, 8, 16, 32, 0)
RANK_ALPHA = ((8, 32.0), (16, 64.0), (32, 128.0), (64, 256.0))
SITE_SETS = (("q", "v"), ("q", "k", "v", "proj"), ("ffn",), ("q", "k", "v", "proj", "ffn"))


def build_parser():
    p = argparse.ArgumentParser(prog="lifelong-reid",
                                description="Adapter-based lifelong re-identification on "
                                            "synthetic multi-domain data.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    def verb(name, help_text, *, config=True, data=False, out=False, ckpt=False):
        sp = sub.add_parser(name, help=help_text)
        if config:
            sp.add_argument("--config", help="experiment JSON (defaults if omitted)")
            sp.add_argument("--seed", type=int, help="override the config seed")
        if data:
            sp.add_argument("--data", required=True, help="dataset directory from gen-data")
        if out:
            sp.add_argument("--out", required=out == "required",
                            help="output directory (default: config 'out')")
        if ckpt:
            sp.add_argument("--ckpt", required=ckpt == "required", help="checkpoint directory")
        sp.add_argument("--threads", type=int, help="cap BLAS worker threads")
        return sp

    verb("gen-data", "generate the synthetic domain corpus", out=True)
    verb("train", "run the full lifelong sequence, evaluating after each step",
         data=True, out=True)

    sp = verb("eval", "score a checkpoint", config=False, data=True, out=True, ckpt="required")
    sp.add_argument("--domains", help="comma-separated domain names (default: all learned)")
    sp.add_argument("--unseen", action="store_true", help="also score the held-out domains")
    sp.add_argument("--stats-samples", type=int,
                    help="estimate test statistics from N random samples (N >= 2)")
    sp.add_argument("--mode", default="scheduled",
                    choices=("scheduled", "fixed", "self", "uniform"))
    sp.add_argument("--tau", type=float, help="temperature for --mode fixed")

    sp = verb("similarity", "routing weights of every test set over the stored domains",
              config=False, data=True, out=True, ckpt="required")
    sp.add_argument("--tau", type=float, help="temperature (default: first-block value)")
    sp.add_argument("--unseen", action="store_true", help="add rows for held-out domains")

    sp = verb("ablate", "parameter sweep written as long-format CSV", data=True,
              out="required", ckpt=True)
    sp.add_argument("axis", choices=ABLATION_AXES)
    sp.add_argument("--trials", type=int, default=10,
                    help="resampling trials per setting for stats-samples")

    sp = verb("storage-report", "per-domain adapter and statistics storage", out=True)
    sp.add_argument("--reference", action="store_true",
                    help="use the 12-block, 768-wide reference backbone instead of the config")

    verb("gradcheck", "finite-difference gradient suite")
    verb("baseline", "sequential full fine-tuning for the forgetting comparison",
         data=True, out=True)
    return p


# -- helpers ------------------------------------------------------------------------

def _cfg(args):
    from . import config
    return config.load(getattr(args, "config", None), seed=getattr(args, "seed", None),
                       out=getattr(args, "out", None))


def _out_dir(args, cfg=None):
    out = getattr(args, "out", None) or (cfg.out if cfg is not None else None)
    if out is None:
        return None
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _write_config(cfg, out):
    from . import config
    if out is not None:
        config.write_resolved(cfg, out)


def _corpus(data_dir):
    from . import data, experiments
    specs, datasets = data.load_corpus(data_dir)
    base, seen, unseen = experiments.split_roles(specs, datasets)
    return specs, base, seen, unseen


def _pick(datasets, names):
    if not names:
        return list(datasets)
    wanted = [n.strip() for n in names.split(",") if n.strip()]
    by_name = {d.name: d for d in datasets}
    missing = [n for n in wanted if n not in by_name]
    if missing:
        from .errors import ConfigError
        raise ConfigError(f"unknown domains {missing}; available {sorted(by_name)}")
    return [by_name[n] for n in wanted]


def _learned(state, seen):
    from .errors import ProtocolError
    by_name = {d.name: d for d in seen}
    missing = [n for n in state.domains if n not in by_name]
    if missing:
        raise ProtocolError(f"checkpoint domains {missing} are not in the data directory")
    return [by_name[n] for n in state.domains]


# -- verbs ----------------------------------------------------------------------------

def cmd_gen_data(args):
    from . import data
    cfg = _cfg(args)
    out = _out_dir(args, cfg)
    specs = cfg.data.specs(cfg.seed)
    datasets = data.generate_sequence(specs)
    data.save_corpus(datasets, specs, out)
    _write_config(cfg, out)
    for ds, spec in zip(datasets, specs):
        print(f"{ds.name:<6} {spec.role:<7} {len(ds):>6} samples  "
              f"{len(set(ds.ids.tolist())):>4} identities")
    return 0


def cmd_train(args):
    from . import experiments, lifelong
    from .evaluation import forgetting_report, forgetting_rows, render_table, write_rows
    cfg = _cfg(args)
    out = _out_dir(args, cfg)
    _, base, seen, unseen = _corpus(args.data)
    _write_config(cfg, out)
    state, history = experiments.train_lifelong(cfg.encoder, cfg.method(), cfg.train, base, seen,
                                                unseen)
    lifelong.save_checkpoint(state, out)
    rows = []
    for mode in ("scheduled", "self"):
        for k, scores in enumerate(history[mode]):
            for name, (m, r1) in scores.items():
                rows.append({"step": k + 1, "mode": mode, "group": "seen", "domain": name,
                             "mAP": m, "rank1": r1})
        rows.extend({"step": len(seen), "mode": mode, **r}
                    for r in history["final"][mode].rows())
    write_rows(out / "scores.csv", _dedupe(rows))
    fr = []
    for mode in ("scheduled", "self"):
        fr.extend(forgetting_rows(forgetting_report(history[mode]), method=f"adapters-{mode}"))
    write_rows(out / "forgetting.csv", fr)
    print(render_table(history["final"]["scheduled"]))
    return 0


def _dedupe(rows):
    """Drop repeated (step, mode, group, domain) keys, keeping the first."""
    seen, out = set(), []
    for r in rows:
        key = (r["step"], r["mode"], r["group"], r["domain"])
        if key not in seen:
            seen.add(key)
            out.append({k: r[k] for k in ("step", "mode", "group", "domain", "mAP", "rank1")})
    return out


def cmd_eval(args):
    from . import lifelong
    from .evaluation import render_table, write_rows
    state = lifelong.load_checkpoint(args.ckpt)
    _, _, seen, unseen = _corpus(args.data)
    chosen = _pick(_learned(state, seen), args.domains)
    held = unseen if args.unseen else []
    if args.mode == "fixed" and args.tau is None:
        from .errors import ParameterError
        raise ParameterError("--mode fixed needs --tau")
    report = lifelong.evaluate(state, chosen, held, mode=args.mode, tau=args.tau,
                               stats_sample_limit=args.stats_samples)
    out = Path(args.out) if args.out else Path(args.ckpt) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    _write_eval_config(state, out, vars(args))
    write_rows(out / "scores.csv", report.rows(mode=args.mode))
    print(render_table(report))
    return 0


def _write_eval_config(state, out, flags):
    import json
    from .config import ExperimentConfig, resolved_dict
    m = state.method
    cfg = ExperimentConfig(encoder=state.encoder.cfg, rank=m.rank, alpha=m.alpha,
                           schedule=m.schedule, train=state.train_cfg, seed=m.seed, out=str(out))
    d = resolved_dict(cfg)
    d["invocation"] = {k: v for k, v in flags.items() if k not in ("func",)}
    (Path(out) / "config.resolved.json").write_text(json.dumps(d, indent=2) + "\n")


def cmd_similarity(args):
    from . import lifelong
    from .evaluation import write_similarity
    state = lifelong.load_checkpoint(args.ckpt)
    _, _, seen, unseen = _corpus(args.data)
    rows = _learned(state, seen) + (list(unseen) if args.unseen else [])
    mat = lifelong.similarity_matrix(state, rows, tau=args.tau)
    out = Path(args.out) if args.out else Path(args.ckpt) / "eval"
    out.mkdir(parents=True, exist_ok=True)
    _write_eval_config(state, out, vars(args))
    write_similarity(out / "similarity.csv", state.domains, mat)
    header = "test \\ stored " + " ".join(f"{n:>7}" for n in state.domains)
    print(header)
    for ds, row in zip(rows, mat):
        print(f"{ds.name:<14}" + " ".join(f"{v:7.3f}" for v in row))
    return 0


def _sweep_rows(axis, setting, report):
    rows = []
    for r in report.rows():
        for metric in ("mAP", "rank1"):
            rows.append({"axis": axis, "setting": setting, "group": r["group"],
                         "domain": r["domain"], "metric": metric, "value": r[metric]})
    return rows


def cmd_ablate(args):
    import numpy as np

    from . import experiments, lifelong, selector
    from .errors import ConfigError
    from .evaluation import score_dataset, write_rows
    out = _out_dir(args)
    rows = []
    _, base, seen, unseen = _corpus(args.data)
    if args.axis in ("rank-alpha", "sites"):
        cfg = _cfg(args)
        _write_config(cfg, out)
        if args.axis == "rank-alpha":
            grid = [(f"r={r},alpha={a:g}", dataclasses.replace(cfg, rank=r, alpha=a))
                    for r, a in RANK_ALPHA if r <= min(cfg.encoder.d_model, cfg.encoder.ffn_dim)]
        else:
            grid = [("+".join(s), dataclasses.replace(
                cfg, encoder=dataclasses.replace(cfg.encoder, sites=s))) for s in SITE_SETS]
        for name, c in grid:
            log.info("ablate %s: %s", args.axis, name)
            _, hist = experiments.train_lifelong(c.encoder, c.method(), c.train, base, seen,
                                                 unseen, eval_modes=("scheduled",))
            rows.extend(_sweep_rows(args.axis, name, hist["final"]["scheduled"]))
        write_rows(out / "sweep.csv", rows)
        print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
        return 0

    if not args.ckpt:
        raise ConfigError(f"ablate {args.axis} needs --ckpt")
    state = lifelong.load_checkpoint(args.ckpt)
    learned = _learned(state, seen)
    _write_eval_config(state, out, vars(args))
    sched = state.method.schedule

    def with_schedule(s):
        return dataclasses.replace(state, method=dataclasses.replace(state.method, schedule=s))

    if args.axis == "temperature-family":
        for fam in selector.SCHEDULES:
            st = with_schedule(dataclasses.replace(sched, family=fam))
            rows.extend(_sweep_rows(args.axis, fam, lifelong.evaluate(st, learned, unseen)))
    elif args.axis == "a-b-grid":
        for a in A_GRID:
            for b in B_GRID:
                st = with_schedule(dataclasses.replace(sched, a=a, b=b))
                rows.extend(_sweep_rows(args.axis, f"a={a:g},b={b:g}",
                                        lifelong.evaluate(st, learned, unseen)))
    elif args.axis == "fixed-temperature":
        for tau in FIXED_TAUS:
            rows.extend(_sweep_rows(args.axis, f"tau={tau:g}",
                                    lifelong.evaluate(state, learned, unseen, mode="fixed",
                                                      tau=tau)))
        rows.extend(_sweep_rows(args.axis, "scheduled", lifelong.evaluate(state, learned, unseen)))
    elif args.axis == "stats-samples":
        for n in STATS_SAMPLES:
            setting = "all" if n == 0 else f"n={n}"
            for group, dsets in (("seen", learned), ("unseen", unseen)):
                for k, ds in enumerate(dsets):
                    test = ds.test()
                    trials = 1 if n == 0 else args.trials
                    rng = np.random.default_rng([state.method.seed, n, k])
                    maps, r1s, hits = [], [], []
                    for _ in range(trials):
                        feats, info = lifelong.infer_features(
                            state, test.features, stats_sample_limit=n or None, rng=rng)
                        m, r1 = score_dataset(feats, test)
                        maps.append(m)
                        r1s.append(r1)
                        hits.append(int(np.argmin(info["distances"])) == k)
                    vals = {"mAP": np.mean(maps), "rank1": np.mean(r1s)}
                    if group == "seen":
                        vals["selection_accuracy"] = np.mean(hits)
                    for metric, v in vals.items():
                        rows.append({"axis": args.axis, "setting": setting, "group": group,
                                     "domain": ds.name, "metric": metric, "value": float(v)})
    write_rows(out / "sweep.csv", rows)
    print(f"wrote {len(rows)} rows to {out / 'sweep.csv'}")
    return 0


REFERENCE_BACKBONE = {"blocks": 12, "d_model": 768, "ffn_dim": 3072,
                      "sites": ("q", "k", "v", "proj"), "rank": 64, "stats_dim": 768}


def cmd_storage_report(args):
    from .adapters import storage_bytes
    from .evaluation import write_rows
    cfg = _cfg(args)
    if args.reference:
        shape = dict(REFERENCE_BACKBONE)
    else:
        e = cfg.encoder
        shape = {"blocks": e.blocks, "d_model": e.d_model, "ffn_dim": e.ffn_dim,
                 "sites": e.sites, "rank": cfg.rank, "stats_dim": e.d_model}
    rep = storage_bytes(**shape)
    rows = [
        {"item": "adapters", "bytes": rep.adapter_bytes, "MiB": rep.adapter_mib},
        {"item": "stats", "bytes": rep.stats_bytes, "MiB": rep.stats_mib},
        {"item": "stats_file", "bytes": rep.stats_file_bytes, "MiB": rep.stats_file_mib},
    ]
    print(f"backbone: {shape['blocks']} blocks, width {shape['d_model']}, "
          f"sites {'/'.join(shape['sites'])}, rank {shape['rank']}")
    for r in rows:
        print(f"{r['item']:<14}{r['bytes']:>14,d} B {r['MiB']:>10.3f} MiB")
    out = _out_dir(args)
    if out is not None:
        write_rows(out / "storage.csv", rows)
        _write_config(cfg, out)
    return 0


def cmd_gradcheck(args):
    from .gradsuite import TOLERANCE, run_suite
    cfg = _cfg(args)
    results = run_suite(cfg.seed)
    failed = 0
    for name, err in results:
        ok = err < TOLERANCE
        failed += not ok
        print(f"{'PASS' if ok else 'FAIL'}  {name:<32} rel.err {err:.2e}")
    print(f"{len(results) - failed}/{len(results)} checks passed (tolerance {TOLERANCE:g})")
    return 0 if failed == 0 else 1


def cmd_baseline(args):
    from . import experiments, lifelong
    from .evaluation import forgetting_report, forgetting_rows, write_rows
    cfg = _cfg(args)
    out = _out_dir(args, cfg)
    _, base, seen, unseen = _corpus(args.data)
    _write_config(cfg, out)
    state = lifelong.new_state(cfg.encoder, cfg.method(), cfg.train)
    lifelong.pretrain(state, base)
    log_rows = []
    _, history, final = experiments.train_baseline(state.encoder, cfg.train, seen, unseen,
                                                   seed=cfg.seed, log_rows=log_rows)
    rows = []
    for k, scores in enumerate(history):
        for name, (m, r1) in scores.items():
            rows.append({"step": k + 1, "mode": "finetune", "group": "seen", "domain": name,
                         "mAP": m, "rank1": r1})
    for name, (m, r1) in final["unseen"].items():
        rows.append({"step": len(seen), "mode": "finetune", "group": "unseen", "domain": name,
                     "mAP": m, "rank1": r1})
    avg = experiments.seen_average(final["seen"])
    avg1 = experiments.seen_average(final["seen"], metric=1)
    rows.append({"step": len(seen), "mode": "finetune", "group": "seen", "domain": "seen_avg",
                 "mAP": avg, "rank1": avg1})
    write_rows(out / "scores.csv", rows)
    write_rows(out / "forgetting.csv", forgetting_rows(forgetting_report(history), "finetune"))
    lifelong.write_log(out / "log.csv", log_rows)
    print(f"sequential fine-tuning: final seen-average mAP {100 * avg:.1f}")
    return 0


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval": cmd_eval,
    "similarity": cmd_similarity,
    "ablate": cmd_ablate,
    "storage-report": cmd_storage_report,
    "gradcheck": cmd_gradcheck,
    "baseline": cmd_baseline,
}


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    from .errors import ReidError
    try:
        return COMMANDS[args.verb](args)
    except ReidError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return exc.exit_code
    except FileNotFoundError as exc:
        print(f"error [missing file]: {exc}", file=sys.stderr)
        return EXIT_MISSING_FILE


if __name__ == "__main__":
    sys.exit(main())
