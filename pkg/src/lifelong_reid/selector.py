"""Temperature-scheduled softmax routing over per-domain distances."""
import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError, InsufficientSamplesError, OutOfRangeError, ParameterError

_E = math.e


def _linear(x):
    return 1.0 - x


def _cosinoidal(x):
    return math.cos(math.pi * x / 2.0)


def _exponential(x):
    return 1.0 - (math.exp(x) - 1.0) / (_E - 1.0)


def _logarithmic(x):
    return 1.0 - math.log1p((_E - 1.0) * x)


def _square_root(x):
    return 1.0 - math.sqrt(x)


# All map [0, 1] -> [1, 0] and are strictly decreasing. cosinoidal and
# exponential are concave, logarithmic and square_root convex.
SCHEDULES = {
    "linear": _linear,
    "cosinoidal": _cosinoidal,
    "exponential": _exponential,
    "logarithmic": _logarithmic,
    "square_root": _square_root,
}


def schedule_g(family, x):
    if family not in SCHEDULES:
        raise ParameterError(f"unknown schedule family {family!r}; choose from {sorted(SCHEDULES)}")
    if not 0.0 <= x <= 1.0:
        raise DomainError(f"schedule ratio must lie in [0, 1], got {x}")
    return SCHEDULES[family](x)


@dataclass(frozen=True)
class ScheduleConfig:
    family: str = "cosinoidal"
    a: float = 0.5
    b: float = 0.1
    total_layers: int = 4

    def __post_init__(self):
        if self.family not in SCHEDULES:
            raise ParameterError(f"unknown schedule family {self.family!r}")
        if self.a < 0:
            raise ParameterError("schedule scale a must be >= 0")
        if self.b <= 0:
            raise ParameterError("schedule shift b must be > 0 to keep the temperature positive")
        if self.total_layers < 1:
            raise ParameterError("total_layers must be >= 1")


def temperature(layer, cfg):
    """Softmax temperature for block ``layer`` (1-based): ``a * g(l / L) + b``."""
    if not 1 <= layer <= cfg.total_layers:
        raise OutOfRangeError(f"layer {layer} outside 1..{cfg.total_layers}")
    return cfg.a * schedule_g(cfg.family, layer / cfg.total_layers) + cfg.b


def temperatures(cfg):
    return [temperature(l, cfg) for l in range(1, cfg.total_layers + 1)]


def similarity(distances, tau):
    """Softmax of ``-sqrt(d) / tau`` over domains; max-subtracted for range safety."""
    d = np.asarray(distances, dtype=np.float64).reshape(-1)
    if d.size == 0:
        raise InsufficientSamplesError("no domains to route between")
    if not tau > 0:
        raise ParameterError(f"temperature must be positive, got {tau}")
    if np.any(d < 0):
        raise ParameterError("distances must be non-negative")
    score = -np.sqrt(d) / tau
    score -= score.max()
    w = np.exp(score)
    return w / w.sum()


def block_mixing(distances, cfg):
    """Per-block weight vectors, shape ``(L, n_domains)``."""
    return np.stack([similarity(distances, t) for t in temperatures(cfg)])


def fixed_mixing(distances, tau, blocks):
    return np.tile(similarity(distances, tau), (blocks, 1))


def one_hot_mixing(distances, blocks):
    """Argmax self-selection: all weight on the nearest domain (ties -> first)."""
    d = np.asarray(distances, dtype=np.float64)
    w = np.zeros((blocks, d.size))
    w[:, int(np.argmin(d))] = 1.0
    return w
