"""Experiment configuration: one JSON file, every key validated."""
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from . import data, selector
from .encoder import EncoderConfig
from .errors import ConfigError, ReidError
from .lifelong import MethodConfig
from .training import TrainConfig

_DOMAIN_KEYS = {f.name for f in fields(data.DomainSpec)} - {"name", "gap_seed", "role",
                                                            "blend_seeds", "blend_weights"}


@dataclass(frozen=True)
class DataConfig:
    seen: int = 4
    unseen: int = 1
    base_ids: int = 100
    blend_parents: int = 3
    domain: dict = field(default_factory=dict)   # DomainSpec overrides shared by all domains

    def specs(self, seed):
        return data.default_specs(seed=seed, seen=self.seen, unseen=self.unseen,
                                  base_ids=self.base_ids, blend_parents=self.blend_parents,
                                  **self.domain)


@dataclass(frozen=True)
class ExperimentConfig:
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    rank: int = 64
    alpha: float = 256.0
    schedule: selector.ScheduleConfig = field(default_factory=selector.ScheduleConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    out: str = "runs/default"

    def method(self):
        return MethodConfig(rank=self.rank, alpha=self.alpha, schedule=self.schedule,
                            seed=self.seed)

    def to_dict(self):
        return asdict(self)


def _build(cls, raw, where):
    if raw is None:
        return cls()
    if not isinstance(raw, dict):
        raise ConfigError(f"{where}: expected an object, got {type(raw).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"{where}: unknown keys {unknown}")
    try:
        return cls(**raw)
    except ReidError as exc:
        raise ConfigError(f"{where}: {exc}") from exc
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def _check_types(obj, where):
    for f in fields(obj):
        v = getattr(obj, f.name)
        default = f.default if f.default is not f.default_factory else None
        if isinstance(default, bool) or isinstance(v, bool):
            continue
        if isinstance(default, int) and not isinstance(v, int):
            raise ConfigError(f"{where}.{f.name}: expected an integer, got {v!r}")
        if isinstance(default, float) and not isinstance(v, (int, float)):
            raise ConfigError(f"{where}.{f.name}: expected a number, got {v!r}")


def from_dict(raw):
    """Validate ``raw`` and fill defaults. Raises :class:`ConfigError`."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    top = {f.name for f in fields(ExperimentConfig)}
    unknown = sorted(set(raw) - top)
    if unknown:
        raise ConfigError(f"unknown top-level keys {unknown}")
    enc_raw = raw.get("encoder")
    if isinstance(enc_raw, dict) and "sites" in enc_raw:
        enc_raw = {**enc_raw, "sites": tuple(enc_raw["sites"])}
    encoder = _build(EncoderConfig, enc_raw, "encoder")
    schedule = _build(selector.ScheduleConfig, raw.get("schedule"), "schedule")
    schedule = selector.ScheduleConfig(family=schedule.family, a=schedule.a, b=schedule.b,
                                       total_layers=encoder.blocks)
    train = _build(TrainConfig, raw.get("train"), "train")
    dcfg = _build(DataConfig, raw.get("data"), "data")
    bad = sorted(set(dcfg.domain) - _DOMAIN_KEYS)
    if bad:
        raise ConfigError(f"data.domain: unknown keys {bad}")
    for obj, where in ((encoder, "encoder"), (train, "train"), (dcfg, "data")):
        _check_types(obj, where)
    if dcfg.seen < 1 or dcfg.unseen < 0 or dcfg.base_ids < 2:
        raise ConfigError("data: need seen >= 1, unseen >= 0, base_ids >= 2")
    try:
        for spec in dcfg.specs(0):
            spec.validate()
    except ReidError as exc:
        raise ConfigError(f"data: {exc}") from exc
    cfg = ExperimentConfig(encoder=encoder, schedule=schedule, train=train, data=dcfg,
                           **{k: raw[k] for k in ("rank", "alpha", "seed", "out") if k in raw})
    if not isinstance(cfg.rank, int) or not 1 <= cfg.rank <= min(encoder.d_model, encoder.ffn_dim):
        raise ConfigError(f"rank must be an integer in 1..{min(encoder.d_model, encoder.ffn_dim)}")
    if not isinstance(cfg.alpha, (int, float)) or cfg.alpha <= 0:
        raise ConfigError("alpha must be positive")
    if not isinstance(cfg.seed, int) or cfg.seed < 0:
        raise ConfigError("seed must be a non-negative integer")
    return cfg


def load(path=None, **overrides):
    """Read a JSON config (or defaults) and apply top-level ``overrides``."""
    raw = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise FileNotFoundError(f"config {p} not found")
        try:
            raw = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
    raw = dict(raw)
    raw.update({k: v for k, v in overrides.items() if v is not None})
    return from_dict(raw)


def resolved_dict(cfg):
    d = cfg.to_dict()
    d["encoder"]["sites"] = list(d["encoder"]["sites"])
    return d


def write_resolved(cfg, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.resolved.json").write_text(json.dumps(resolved_dict(cfg), indent=2) + "\n")
