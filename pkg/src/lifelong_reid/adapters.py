"""Low-rank adapters on frozen linear layers.

Naming follows application order: ``down`` (r x d_in) is applied to the
input first, ``up`` (d_out x r) second, so one adapter contributes
``(alpha / r) * up @ down @ f``.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError, OutOfRangeError, ParameterError

INIT_STD = 0.02
MIB = 2 ** 20


@dataclass
class LoraAdapter:
    down: np.ndarray
    up: np.ndarray
    alpha: float

    @property
    def rank(self):
        return self.down.shape[0]

    @property
    def scale(self):
        return self.alpha / self.rank

    def delta(self):
        """Dense ``(alpha / r) * up @ down``."""
        return self.scale * (self.up @ self.down)


@dataclass
class AdaptedLinear:
    weight: np.ndarray
    bias: np.ndarray
    adapters: list = field(default_factory=list)
    site: tuple = ()

    @property
    def d_in(self):
        return self.weight.shape[1]

    @property
    def d_out(self):
        return self.weight.shape[0]

    def base(self, f):
        return f @ self.weight.T + self.bias


def _check_mix(layer, s):
    s = np.asarray(s)
    if s.ndim != 1 or s.shape[0] != len(layer.adapters):
        raise DimensionError(
            f"mixing vector of length {s.shape} for a layer with {len(layer.adapters)} adapters")
    return s


def forward_single(layer, index, f):
    """Base layer plus one adapter: ``W f + b + (alpha/r) up down f``."""
    if not 0 <= index < len(layer.adapters):
        raise OutOfRangeError(f"adapter {index} not in 0..{len(layer.adapters) - 1}")
    ad = layer.adapters[index]
    return layer.base(f) + ad.scale * ((f @ ad.down.T) @ ad.up.T)


def forward_mixed(layer, s, f):
    """Base layer plus the s-weighted sum of every adapter's low-rank path."""
    s = _check_mix(layer, s)
    out = layer.base(f)
    for w, ad in zip(s, layer.adapters):
        out = out + (w * ad.scale) * ((f @ ad.down.T) @ ad.up.T)
    return out


def merge(layer, s):
    """Fold the weighted adapters into the base weight; bias is unchanged.

    Zero weights are skipped, so a one-hot ``s`` reproduces the single
    adapter merge bit for bit no matter how many adapters are installed.
    """
    s = _check_mix(layer, s)
    w = layer.weight.copy()
    for weight, ad in zip(s, layer.adapters):
        if weight != 0:
            w += (weight * ad.scale) * (ad.up @ ad.down)
    return w, layer.bias.copy()


def adapter_rng(seed, block, site_index, step):
    return np.random.default_rng([seed, block, site_index, step])


def add_adapter(layer, rank, alpha, seed, rng=None):
    """Append a new adapter whose initial contribution is exactly zero."""
    if not 1 <= rank <= min(layer.d_in, layer.d_out):
        raise ParameterError(f"rank {rank} must be in 1..{min(layer.d_in, layer.d_out)}")
    if alpha <= 0:
        raise ParameterError("alpha must be positive")
    rng = np.random.default_rng(seed) if rng is None else rng
    dtype = layer.weight.dtype
    down = (rng.standard_normal((rank, layer.d_in)) * INIT_STD).astype(dtype)
    up = np.zeros((layer.d_out, rank), dtype=dtype)
    layer.adapters.append(LoraAdapter(down=down, up=up, alpha=float(alpha)))
    return len(layer.adapters) - 1


@dataclass(frozen=True)
class StorageReport:
    adapter_bytes: int
    stats_bytes: int
    stats_file_bytes: int

    @property
    def adapter_mib(self):
        return self.adapter_bytes / MIB

    @property
    def stats_mib(self):
        return self.stats_bytes / MIB

    @property
    def stats_file_mib(self):
        return self.stats_file_bytes / MIB


def site_shapes(d_model, ffn_dim, sites):
    """(d_in, d_out) of every adapted linear layer in one block."""
    shapes = []
    for site in sites:
        if site in ("q", "k", "v", "proj"):
            shapes.append((d_model, d_model))
        elif site == "ffn":
            shapes.extend([(d_model, ffn_dim), (ffn_dim, d_model)])
        else:
            raise ParameterError(f"unknown adapter site {site!r}")
    return shapes


def storage_bytes(blocks, d_model, ffn_dim, sites, rank, stats_dim):
    """Per-dataset storage at 4 bytes/value: adapters, stats payload, stats file."""
    from .stats import stats_file_bytes

    per_block = sum(rank * (d_in + d_out) for d_in, d_out in site_shapes(d_model, ffn_dim, sites))
    return StorageReport(
        adapter_bytes=4 * blocks * per_block,
        stats_bytes=4 * (stats_dim + stats_dim * stats_dim),
        stats_file_bytes=stats_file_bytes(stats_dim),
    )
