"""Synthetic multi-domain re-identification corpus and its on-disk format.

Each domain draws its own identities, camera offsets, an orthogonal
rotation with per-axis scaling, a domain offset, and a mixing matrix that
spreads the 32-d generating vector across ``tokens * token_dim`` features.
"""
import csv
import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, FormatError, ParameterError

GEN_DIM = 32
DATA_MAGIC = b"ADLDATA0"
DATA_VERSION = 1
_HEADER = struct.Struct("<8sIII")
SPLITS = ("train", "query", "gallery")


@dataclass(frozen=True)
class DomainSpec:
    name: str
    gap_seed: int
    num_identities: int = 50
    samples_per_identity: int = 20
    cameras: int = 4
    noise_std: float = 0.5
    camera_std: float = 1.0
    gap: float = 6.0
    eval_fraction: float = 0.2
    feature_dim: int = 128
    role: str = "seen"
    blend_seeds: tuple = ()
    blend_weights: tuple = ()
    shared: float = 0.0
    family_seed: int = 0

    def validate(self):
        if self.cameras < 2:
            raise ParameterError(f"{self.name}: need at least 2 cameras")
        if self.samples_per_identity < 4:
            raise ParameterError(f"{self.name}: need at least 4 samples per identity")
        if self.num_identities < 2:
            raise ParameterError(f"{self.name}: need at least 2 identities")
        if not 0.0 <= self.shared <= 1.0:
            raise ParameterError(f"{self.name}: shared fraction must lie in [0, 1]")
        if self.noise_std < 0 or self.camera_std < 0 or self.gap < 0:
            raise ParameterError(f"{self.name}: noise, camera and gap scales must be >= 0")
        if self.role not in ("base", "seen", "unseen"):
            raise ParameterError(f"{self.name}: unknown role {self.role!r}")
        if len(self.blend_seeds) != len(self.blend_weights):
            raise ParameterError(f"{self.name}: blend seeds and weights differ in length")
        if self.blend_weights and (min(self.blend_weights) < 0 or sum(self.blend_weights) <= 0):
            raise ParameterError(f"{self.name}: blend weights must be non-negative, not all zero")
        if self.role != "base" and self.num_eval_ids < 1:
            raise ParameterError(f"{self.name}: eval_fraction leaves no evaluation identities")

    @property
    def num_eval_ids(self):
        if self.role == "base":
            return 0
        return max(1, int(round(self.eval_fraction * self.num_identities)))


@dataclass
class DomainDataset:
    name: str
    features: np.ndarray
    ids: np.ndarray
    cams: np.ndarray
    split: np.ndarray
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.ids)

    def subset(self, mask):
        return DomainDataset(self.name, self.features[mask], self.ids[mask], self.cams[mask],
                             self.split[mask], dict(self.meta))

    def part(self, split):
        return self.subset(self.split == split)

    def test(self):
        """Query and gallery together (the unlabeled test set seen at inference)."""
        return self.subset(self.split != "train")


def _orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def domain_transform(spec):
    """Latent-to-feature map ``x = linear @ latent + shift`` plus camera offsets.

    With ``shared > 0`` the map and shift are a variance-preserving blend of
    the domain's own draw and one drawn from ``family_seed`` (common to all
    domains of a corpus). A blended spec averages the maps and shifts of the
    domains generated from ``blend_seeds``; its cameras and identities are
    its own.
    """
    rng = np.random.default_rng([spec.gap_seed, 101])
    rotation = _orthogonal(rng, GEN_DIM)
    scale = rng.uniform(0.6, 1.4, GEN_DIM)
    offset = rng.standard_normal(GEN_DIM) * (spec.gap / np.sqrt(GEN_DIM))
    camera = rng.standard_normal((spec.cameras, GEN_DIM)) * spec.camera_std
    mixing = rng.standard_normal((spec.feature_dim, GEN_DIM)) / np.sqrt(GEN_DIM)
    linear = mixing @ (scale[:, None] * rotation)
    shift = mixing @ offset
    if spec.shared > 0:
        fam = domain_transform(DomainSpec(name="family", gap_seed=spec.family_seed,
                                          cameras=spec.cameras, camera_std=spec.camera_std,
                                          gap=spec.gap, feature_dim=spec.feature_dim))
        own_w, fam_w = np.sqrt(1.0 - spec.shared), np.sqrt(spec.shared)
        linear = own_w * linear + fam_w * fam["linear"]
        shift = own_w * shift + fam_w * fam["shift"]
    if spec.blend_seeds:
        w = np.asarray(spec.blend_weights, dtype=np.float64)
        w = w / w.sum()
        parents = [domain_transform(DomainSpec(name="parent", gap_seed=s, cameras=spec.cameras,
                                               camera_std=spec.camera_std, gap=spec.gap,
                                               feature_dim=spec.feature_dim, shared=spec.shared,
                                               family_seed=spec.family_seed))
                   for s in spec.blend_seeds]
        linear = sum(wi * p["linear"] for wi, p in zip(w, parents))
        shift = sum(wi * p["shift"] for wi, p in zip(w, parents))
    return {"linear": linear, "shift": shift, "camera": camera}


def _check_separation(latent, ids, cams):
    """Cross-camera same-identity pairs must be closer than different-identity pairs."""
    sq = (latent ** 2).sum(1)
    d = sq[:, None] + sq[None, :] - 2 * latent @ latent.T
    same = ids[:, None] == ids[None, :]
    cross_cam = cams[:, None] != cams[None, :]
    pos = d[same & cross_cam]
    neg = d[~same]
    if pos.size and neg.size and not pos.mean() < neg.mean():
        raise DataError("generated identities are not separable across cameras")


def generate_domain(spec, id_offset=0):
    """Sample one domain; identities are ``id_offset .. id_offset + num_identities - 1``."""
    spec.validate()
    tf = domain_transform(spec)
    rng = np.random.default_rng([spec.gap_seed, 202])
    z = rng.standard_normal((spec.num_identities, GEN_DIM))
    n_per = spec.samples_per_identity
    local = np.repeat(np.arange(spec.num_identities), n_per)
    cams = np.tile(np.arange(n_per) % spec.cameras, spec.num_identities)
    noise = rng.standard_normal((len(local), GEN_DIM)) * spec.noise_std
    latent = z[local] + tf["camera"][cams] + noise
    _check_separation(latent, local, cams)
    feats = (latent @ tf["linear"].T + tf["shift"]).astype(np.float32)

    split = np.full(len(local), "train", dtype="<U7")
    if spec.role != "base":
        eval_ids = np.sort(rng.permutation(spec.num_identities)[:spec.num_eval_ids])
        query_cam = rng.integers(0, spec.cameras, size=len(eval_ids))
        for pid, qc in zip(eval_ids, query_cam):
            rows = local == pid
            split[rows & (cams == qc)] = "query"
            split[rows & (cams != qc)] = "gallery"
    return DomainDataset(spec.name, feats, (local + id_offset).astype(np.int64),
                         cams.astype(np.int64), split, meta=asdict(spec))


def generate_sequence(specs):
    """Generate domains in order with globally unique identity labels."""
    out, offset = [], 0
    for spec in specs:
        out.append(generate_domain(spec, id_offset=offset))
        offset += spec.num_identities
    return out


def default_specs(seed=0, seen=4, unseen=1, base_ids=100, blend_parents=3, **overrides):
    """Base corpus, ``seen`` lifelong domains, then ``unseen`` held-out domains.

    The k-th unseen domain blends ``blend_parents`` consecutive seen domains
    (starting at seen domain k) with equal weights; with ``blend_parents``
    below 2 it is an independent draw.
    """
    overrides = {"family_seed": seed * 1000 + 999, **overrides}
    specs = [DomainSpec(name="base", gap_seed=seed * 1000, role="base",
                        **{**overrides, "num_identities": base_ids})]
    for i in range(seen):
        specs.append(DomainSpec(name=f"d{i + 1}", gap_seed=seed * 1000 + i + 1, **overrides))
    for i in range(unseen):
        blend = {}
        k = min(blend_parents, seen)
        if k >= 2:
            parents = tuple(seed * 1000 + 1 + (i + j) % seen for j in range(k))
            blend = {"blend_seeds": parents, "blend_weights": (1.0 / k,) * k}
        specs.append(DomainSpec(name=f"u{i + 1}", gap_seed=seed * 1000 + 500 + i, role="unseen",
                                **blend, **overrides))
    return specs


# -- file format ------------------------------------------------------------

def save_dataset(ds, path):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    feats = np.ascontiguousarray(ds.features, dtype="<f4")
    n, dim = feats.shape
    (path / "features.bin").write_bytes(
        _HEADER.pack(DATA_MAGIC, DATA_VERSION, n, dim) + feats.tobytes())
    with open(path / "meta.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_index", "identity", "camera", "split"])
        for i in range(n):
            w.writerow([i, int(ds.ids[i]), int(ds.cams[i]), ds.split[i]])


def load_dataset(path, name=None):
    path = Path(path)
    raw = (path / "features.bin").read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: truncated header")
    magic, version, n, dim = _HEADER.unpack_from(raw)
    if magic != DATA_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != DATA_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if len(raw) != _HEADER.size + 4 * n * dim:
        raise FormatError(f"{path}: body holds {len(raw) - _HEADER.size} bytes, "
                          f"expected {4 * n * dim}")
    feats = np.frombuffer(raw, dtype="<f4", offset=_HEADER.size).reshape(n, dim).astype(np.float32)
    with open(path / "meta.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != n:
        raise FormatError(f"{path}: meta.csv has {len(rows)} rows for {n} samples")
    if [int(r["sample_index"]) for r in rows] != list(range(n)):
        raise FormatError(f"{path}: meta.csv sample_index is not 0..N-1")
    split = np.array([r["split"] for r in rows], dtype="<U7")
    if not set(split) <= set(SPLITS):
        raise FormatError(f"{path}: unknown split tags {sorted(set(split) - set(SPLITS))}")
    return DomainDataset(name or path.name, feats,
                         np.array([int(r["identity"]) for r in rows], dtype=np.int64),
                         np.array([int(r["camera"]) for r in rows], dtype=np.int64), split)


def save_corpus(datasets, specs, out_dir):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for ds in datasets:
        save_dataset(ds, out_dir / ds.name)
    index = {"domains": [asdict(s) for s in specs]}
    (out_dir / "domains.json").write_text(json.dumps(index, indent=2) + "\n")


def load_corpus(data_dir):
    """Return ``(specs, {name: DomainDataset})`` in registration order."""
    data_dir = Path(data_dir)
    index_path = data_dir / "domains.json"
    if not index_path.exists():
        raise FileNotFoundError(f"{index_path} not found")
    specs = []
    for d in json.loads(index_path.read_text())["domains"]:
        d["blend_seeds"] = tuple(d.get("blend_seeds", ()))
        d["blend_weights"] = tuple(d.get("blend_weights", ()))
        specs.append(DomainSpec(**d))
    return specs, {s.name: load_dataset(data_dir / s.name, s.name) for s in specs}


def check_disjoint(datasets):
    seen = set()
    for ds in datasets:
        ids = set(np.unique(ds.ids).tolist())
        if ids & seen:
            raise DataError(f"{ds.name}: identity labels overlap earlier domains")
        seen |= ids
