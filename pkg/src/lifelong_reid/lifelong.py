"""Lifelong sequence: per-step stats, adapter growth, training, inference, checkpoints."""
import csv
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import selector
from .encoder import Encoder, EncoderConfig
from .errors import (FormatError, InsufficientSamplesError, ParameterError, ProtocolError,
                     StateError)
from .evaluation import EvalReport, score_dataset
from .stats import ROUTING_RIDGE, fit_stats, load_stats, save_stats, w2_distance
from .training import (PrototypeEntry, TrainConfig, pretrain_base, stage1_train_prototypes,
                       stage2_train)

log = logging.getLogger(__name__)

VAL_FRACTION = 0.15
MIX_MODES = ("scheduled", "fixed", "self", "uniform")
LOG_FIELDS = ["step", "stage", "iteration", "i2t", "t2i", "i2tce", "tri", "id", "total"]


@dataclass(frozen=True)
class MethodConfig:
    rank: int = 64
    alpha: float = 256.0
    schedule: selector.ScheduleConfig = field(default_factory=selector.ScheduleConfig)
    seed: int = 0


@dataclass
class LifelongState:
    encoder: Encoder
    method: MethodConfig
    train_cfg: TrainConfig
    prototypes: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    domains: list = field(default_factory=list)
    train_mix: list = field(default_factory=list)
    seen_ids: set = field(default_factory=set)
    log_rows: list = field(default_factory=list)

    @property
    def step(self):
        return len(self.domains)

    def check(self):
        n = self.encoder.num_adapters
        if not (len(self.stats) == n == len(self.domains) == len(self.prototypes)):
            raise StateError("stats, adapters, prototypes and domains are out of step")


def new_state(encoder_cfg, method, train_cfg):
    if method.schedule.total_layers != encoder_cfg.blocks:
        raise ParameterError(f"schedule covers {method.schedule.total_layers} blocks, "
                             f"encoder has {encoder_cfg.blocks}")
    return LifelongState(Encoder(encoder_cfg, seed=method.seed), method, train_cfg)


def pretrain(state, base):
    rng = np.random.default_rng([state.method.seed, 0, 31])
    return pretrain_base(state.encoder, base, state.train_cfg, rng, state.log_rows)


def validation_split(ds, fraction, rng):
    """Stratified by identity: ``fraction`` of each identity's samples, at least one."""
    val = np.zeros(len(ds), dtype=bool)
    for pid in np.unique(ds.ids):
        rows = np.flatnonzero(ds.ids == pid)
        k = max(1, int(round(fraction * len(rows))))
        val[rng.choice(rows, size=k, replace=False)] = True
    return ds.subset(~val), ds.subset(val)


def domain_distances(state, stats, ridge=ROUTING_RIDGE):
    return np.array([w2_distance(stats, s, ridge=ridge) for s in state.stats])


def mixing_for(distances, state, mode="scheduled", tau=None):
    blocks = state.encoder.cfg.blocks
    sched = state.method.schedule
    if mode == "scheduled":
        return selector.block_mixing(distances, sched)
    if mode == "fixed":
        return selector.fixed_mixing(distances, tau, blocks)
    if mode == "self":
        return selector.one_hot_mixing(distances, blocks)
    if mode == "uniform":
        return np.full((blocks, len(distances)), 1.0 / len(distances))
    raise ValueError(f"unknown mixing mode {mode!r}; choose from {MIX_MODES}")


def run_step(state, domain):
    """Learn one new domain from its training split only (no rehearsal)."""
    train_all = domain.part("train")
    ids = set(np.unique(train_all.ids).tolist())
    if ids & state.seen_ids:
        raise ProtocolError(f"{domain.name}: identities overlap earlier steps")
    t = state.step
    seed = state.method.seed
    rng = np.random.default_rng([seed, t + 1, 17])
    train, val = validation_split(train_all, VAL_FRACTION, rng)

    stats = fit_stats(state.encoder.encode_base(val.features))
    state.encoder.add_adapters(state.method.rank, state.method.alpha, seed=seed + 1000 * (t + 1))
    state.stats.append(stats)
    state.domains.append(domain.name)
    mix = mixing_for(domain_distances(state, stats), state)
    state.train_mix.append(mix)

    feats = state.encoder.encode(train.features, mix)
    entry = stage1_train_prototypes(feats, train.ids, state.train_cfg, rng, state.log_rows, t + 1)
    trainable = frozenset(state.encoder.adapter_parameters(step=t))
    stage2_train(state.encoder, train, mix, trainable, entry, state.train_cfg, rng,
                 state.train_cfg.stage2_lr, state.log_rows, t + 1)
    state.prototypes.append(entry)
    state.seen_ids |= ids
    state.check()
    return state


def infer_features(state, samples, mode="scheduled", tau=None, stats_sample_limit=None, rng=None):
    """Route a test set to the stored adapters and encode it with merged weights.

    Returns ``(features, info)``; ``info`` holds the distances and mixing.
    """
    samples = np.asarray(samples)
    if not state.stats:
        raise StateError("no domains have been learned yet")
    pick = np.arange(len(samples))
    if stats_sample_limit is not None:
        if stats_sample_limit < 2:
            raise InsufficientSamplesError("at least 2 samples are needed for statistics")
        if stats_sample_limit < len(samples):
            rng = np.random.default_rng(0) if rng is None else rng
            pick = np.sort(rng.choice(len(samples), size=stats_sample_limit, replace=False))
    if len(pick) < 2:
        raise InsufficientSamplesError("at least 2 samples are needed for statistics")
    test_stats = fit_stats(state.encoder.encode_base(samples[pick]))
    dist = domain_distances(state, test_stats)
    mix = mixing_for(dist, state, mode, tau)
    return state.encoder.encode(samples, mix), {"distances": dist, "mixing": mix}


def evaluate(state, seen, unseen=(), mode="scheduled", tau=None, stats_sample_limit=None):
    report = EvalReport()
    for group, table in ((seen, report.seen), (unseen, report.unseen)):
        for ds in group:
            test = ds.test()
            feats, _ = infer_features(state, test.features, mode, tau, stats_sample_limit)
            table[ds.name] = score_dataset(feats, test)
    return report


def similarity_matrix(state, datasets, tau=None):
    """Row i: routing weights of dataset i's test split over the stored domains."""
    if not state.stats:
        raise StateError("no stored statistics")
    tau = selector.temperature(1, state.method.schedule) if tau is None else tau
    rows = []
    for ds in datasets:
        s = fit_stats(state.encoder.encode_base(ds.test().features))
        rows.append(selector.similarity(domain_distances(state, s), tau))
    return np.array(rows)


# -- baseline ------------------------------------------------------------------------

def baseline_step(encoder, domain, train_cfg, seed, step, log_rows=None):
    """Sequential full fine-tuning on one domain: every base tensor trains."""
    rng = np.random.default_rng([seed, step + 1, 17])
    train, _ = validation_split(domain.part("train"), VAL_FRACTION, rng)
    feats = encoder.encode(train.features)
    entry = stage1_train_prototypes(feats, train.ids, train_cfg, rng, log_rows, step + 1)
    trainable = frozenset(encoder.base_parameters())
    stage2_train(encoder, train, None, trainable, entry, train_cfg, rng, train_cfg.baseline_lr,
                 log_rows, step + 1)
    return encoder


def unfrozen_copy(encoder):
    """Writable copy of the base network with every adapter removed."""
    enc = encoder.copy()
    enc.frozen = False
    for layer in enc.layers.values():
        layer.adapters.clear()
    for arr in enc.base_parameters().values():
        arr.flags.writeable = True
    return enc


def score_plain(encoder, datasets):
    out = {}
    for ds in datasets:
        test = ds.test()
        out[ds.name] = score_dataset(encoder.encode(test.features), test)
    return out


# -- checkpoints ------------------------------------------------------------------------

def _write_blob(path, tensors):
    index, offset = [], 0
    with open(path, "wb") as fh:
        for name, arr in tensors.items():
            data = np.ascontiguousarray(arr, dtype="<f4").tobytes()
            fh.write(data)
            index.append({"name": name, "offset": offset, "shape": list(arr.shape)})
            offset += len(data)
    return index


def _read_blob(path, index):
    raw = Path(path).read_bytes()
    out = {}
    for entry in index:
        n = int(np.prod(entry["shape"])) if entry["shape"] else 1
        end = entry["offset"] + 4 * n
        if end > len(raw):
            raise FormatError(f"{path}: tensor {entry['name']} runs past end of file")
        out[entry["name"]] = np.frombuffer(raw, dtype="<f4", count=n,
                                           offset=entry["offset"]).reshape(entry["shape"]).copy()
    return out


def save_checkpoint(state, out_dir):
    out = Path(out_dir)
    (out / "stats").mkdir(parents=True, exist_ok=True)
    enc = state.encoder
    adapters = {}
    for b in range(enc.cfg.blocks):
        for name in enc.cfg.adapted_layers():
            for t, a in enumerate(enc.layers[(b, name)].adapters):
                adapters[f"{b}.{name}.{t}.down"] = a.down
                adapters[f"{b}.{name}.{t}.up"] = a.up
    protos = {}
    for t, e in enumerate(state.prototypes):
        protos[f"{t}.protos"] = e.protos
        protos[f"{t}.temp"] = e.temp
    manifest = {
        "format": "lifelong-reid-checkpoint",
        "version": 1,
        "encoder": asdict(enc.cfg),
        "method": {"rank": state.method.rank, "alpha": state.method.alpha,
                   "schedule": asdict(state.method.schedule), "seed": state.method.seed},
        "train": asdict(state.train_cfg),
        "steps": state.step,
        "domains": list(state.domains),
        "sites": [{"block": b, "site": name,
                   "shape": list(enc.layers[(b, name)].weight.shape),
                   "ranks": [a.rank for a in enc.layers[(b, name)].adapters],
                   "alphas": [a.alpha for a in enc.layers[(b, name)].adapters]}
                  for b in range(enc.cfg.blocks) for name in enc.cfg.adapted_layers()],
        "prototype_classes": [e.classes.tolist() for e in state.prototypes],
        "train_mixing": [m.tolist() for m in state.train_mix],
        "tensors": {
            "base.bin": _write_blob(out / "base.bin", enc.base_parameters()),
            "adapters.bin": _write_blob(out / "adapters.bin", adapters),
            "prototypes.bin": _write_blob(out / "prototypes.bin", protos),
        },
    }
    for name, s in zip(state.domains, state.stats):
        save_stats(s, out / "stats" / f"{name}.stats")
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    write_log(out / "log.csv", state.log_rows)


def write_log(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=LOG_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.6f}" if isinstance(v, float) else v) for k, v in r.items()})


def load_checkpoint(ckpt_dir):
    ckpt = Path(ckpt_dir)
    path = ckpt / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found")
    man = json.loads(path.read_text())
    if man.get("format") != "lifelong-reid-checkpoint" or man.get("version") != 1:
        raise FormatError(f"{path}: not a version-1 checkpoint manifest")
    cfg = EncoderConfig(**man["encoder"])
    m = man["method"]
    method = MethodConfig(rank=m["rank"], alpha=m["alpha"],
                          schedule=selector.ScheduleConfig(**m["schedule"]), seed=m["seed"])
    state = LifelongState(Encoder(cfg, seed=method.seed), method, TrainConfig(**man["train"]))
    enc = state.encoder
    base = _read_blob(ckpt / "base.bin", man["tensors"]["base.bin"])
    for name, arr in enc.base_parameters().items():
        if name not in base or base[name].shape != arr.shape:
            raise FormatError(f"checkpoint base tensor {name} missing or misshaped")
        arr[...] = base[name]
    adapters = _read_blob(ckpt / "adapters.bin", man["tensors"]["adapters.bin"])
    from .adapters import LoraAdapter
    for site in man["sites"]:
        layer = enc.layers[(site["block"], site["site"])]
        for t, alpha in enumerate(site["alphas"]):
            key = f"{site['block']}.{site['site']}.{t}"
            layer.adapters.append(LoraAdapter(adapters[f"{key}.down"], adapters[f"{key}.up"],
                                              float(alpha)))
    protos = _read_blob(ckpt / "prototypes.bin", man["tensors"]["prototypes.bin"])
    for t, classes in enumerate(man["prototype_classes"]):
        state.prototypes.append(PrototypeEntry(np.array(classes, dtype=np.int64),
                                               protos[f"{t}.protos"], protos[f"{t}.temp"]))
    state.domains = list(man["domains"])
    state.stats = [load_stats(ckpt / "stats" / f"{d}.stats") for d in state.domains]
    state.train_mix = [np.array(x) for x in man["train_mixing"]]
    for c in man["prototype_classes"]:
        state.seen_ids |= set(c)
    enc.freeze()
    state.check()
    return state
