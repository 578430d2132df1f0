"""Gaussian feature statistics, 2-Wasserstein distance, and the stats file format."""
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DimensionError, FormatError, InsufficientSamplesError
from .numerics.linalg import sqrtm_psd, trace_sqrt_psd

STATS_MAGIC = b"ADLSTATS"
STATS_VERSION = 1
_HEADER = struct.Struct("<8sIIQ")
HEADER_BYTES = _HEADER.size

# Ridge added to covariances before the matrix square roots on the routing
# path; finite validation/test splits give rank-deficient estimates.
ROUTING_RIDGE = 1e-6


@dataclass(frozen=True, eq=False)
class GaussianStats:
    """Mean and covariance held at single precision (the stored form).

    Distances are computed in double precision from these values, so a
    statistics object behaves identically before and after a file round-trip.
    """
    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self):
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float32))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=np.float32))
        if self.mean.ndim != 1 or self.cov.shape != (self.dim, self.dim):
            raise DimensionError(f"mean {self.mean.shape} and covariance {self.cov.shape} "
                                 "do not describe one Gaussian")

    @property
    def dim(self):
        return int(self.mean.shape[0])

    def __eq__(self, other):
        if not isinstance(other, GaussianStats):
            return NotImplemented
        return (self.count == other.count and np.array_equal(self.mean, other.mean)
                and np.array_equal(self.cov, other.cov))


def fit_stats(features):
    """Mean and unbiased sample covariance of an ``N x dim`` feature matrix.

    Accumulation is done in float64 in a fixed order, so the result is
    deterministic for a given input.
    """
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] == 0:
        raise DimensionError(f"expected an N x dim matrix, got shape {x.shape}")
    n = x.shape[0]
    if n < 2:
        raise InsufficientSamplesError(f"need at least 2 samples, got {n}")
    if not np.all(np.isfinite(x)):
        raise DimensionError("features contain NaN or Inf")
    mu = x.mean(axis=0)
    xc = x - mu
    cov = (xc.T @ xc) / (n - 1)
    cov = 0.5 * (cov + cov.T)
    return GaussianStats(mean=mu, cov=cov, count=n)


def w2_distance(a, b, ridge=0.0):
    """Squared 2-Wasserstein distance between two Gaussians.

    ``||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a^1/2 S_b S_a^1/2)^1/2)``, the
    symmetric form of the cross term. ``ridge`` is added to both
    covariances first.
    """
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    eye = np.eye(a.dim)
    sa = a.cov.astype(np.float64) + ridge * eye
    sb = b.cov.astype(np.float64) + ridge * eye
    root_a = sqrtm_psd(sa)
    inner = root_a @ sb @ root_a
    cross = trace_sqrt_psd(0.5 * (inner + inner.T))
    diff = a.mean.astype(np.float64) - b.mean.astype(np.float64)
    d = float(diff @ diff + np.trace(sa) + np.trace(sb) - 2.0 * cross)
    return max(d, 0.0)


def save_stats(stats, path):
    path = Path(path)
    header = _HEADER.pack(STATS_MAGIC, STATS_VERSION, stats.dim, stats.count)
    body = (np.ascontiguousarray(stats.mean, dtype="<f4").tobytes()
            + np.ascontiguousarray(stats.cov, dtype="<f4").tobytes())
    path.write_bytes(header + body)


def load_stats(path):
    raw = Path(path).read_bytes()
    if len(raw) < HEADER_BYTES:
        raise FormatError(f"{path}: truncated header")
    magic, version, dim, count = _HEADER.unpack_from(raw)
    if magic != STATS_MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    if version != STATS_VERSION:
        raise FormatError(f"{path}: unsupported version {version}")
    if dim == 0:
        raise FormatError(f"{path}: zero dimension")
    expected = stats_file_bytes(dim)
    if len(raw) != expected:
        raise FormatError(f"{path}: expected {expected} bytes, found {len(raw)}")
    body = np.frombuffer(raw, dtype="<f4", offset=HEADER_BYTES)
    mean = body[:dim].astype(np.float32)
    cov = body[dim:].reshape(dim, dim).astype(np.float32)
    return GaussianStats(mean=mean, cov=cov, count=int(count))


def stats_file_bytes(dim):
    """Header plus mean and covariance at 4 bytes per value."""
    return HEADER_BYTES + 4 * (dim + dim * dim)
