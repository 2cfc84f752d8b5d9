"""Deterministic draws keyed by (path index, time step, retry).

Seeds come from iterating the r=4 logistic map from ``i**-1.5``; each seed keys
a Philox4x64-10 counter-based generator whose first two outputs are the
acceptance threshold and the candidate of a rejection sampler for the standard
normal truncated to [-4.5, 4.5].  Everything here is a pure function of its
arguments, so draws repeat exactly across calls and across threads.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache

import numpy as np
from scipy import stats

GENERATOR = "numpy.random.Philox(4x64-10)/raw53/v1"

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_TWO_POW_M53 = 2.0 ** -53

# Stream tags, placed in the high 64 bits of the Philox key.
STOCK = 0
VARIANCE = 1
INNER_BASE = 2

# Offset applied to external path indices: i=1 starts the logistic map at its
# fixed point 1.0, so index i is fed to the map as i + 2.
INDEX_OFFSET = 2


def _pdf(x: float) -> float:
    return _INV_SQRT_2PI * math.exp(-0.5 * x * x)


class RetriesExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class SeedKey:
    path_index: int
    time_step: int
    retry: int = 0

    def __post_init__(self):
        if self.path_index < 1:
            raise ValueError(f"path_index must be >= 1, got {self.path_index}")
        if self.time_step < 0 or self.retry < 0:
            raise ValueError("time_step and retry must be non-negative")


@dataclass(frozen=True)
class SamplerConfig:
    support_low: float = -4.5
    support_high: float = 4.5
    density_normalizer: float = 0.4
    max_retries: int = 64
    remap_indices: bool = True

    def __post_init__(self):
        if not self.support_low < self.support_high:
            raise ValueError("support_low must be below support_high")
        if self.max_retries < 1:
            raise ValueError("max_retries must be positive")
        peak = _pdf(min(max(0.0, self.support_low), self.support_high))
        if self.density_normalizer < peak:
            raise ValueError(
                f"density_normalizer {self.density_normalizer} is below the pdf peak {peak:.6f}"
            )

    def to_dict(self) -> dict:
        return asdict(self)


DEFAULT_SAMPLER = SamplerConfig()


def seed(key: SeedKey) -> int:
    """Logistic-map seed for one (i, m, k) key."""
    x = 1.0 / math.sqrt(key.path_index) ** 3
    for _ in range(key.retry):
        x = 4.0 * x * (1.0 - x)
    return int(math.floor(((x * 10000.0) % 10.0) * 1_000_000.0 + key.time_step * 100))


def _uniform_pair(seed_value: int, stream: int) -> tuple[float, float]:
    raw = np.random.Philox(key=seed_value + (stream << 64)).random_raw(2)
    return (int(raw[0]) >> 11) * _TWO_POW_M53, (int(raw[1]) >> 11) * _TWO_POW_M53


@lru_cache(maxsize=1 << 20)
def sample_standard(
    i: int, t: int, config: SamplerConfig = DEFAULT_SAMPLER, stream: int = STOCK
) -> float:
    """Truncated standard-normal draw for path ``i`` at step ``t``.

    Retry ``k`` re-seeds with ``seed(i, t, k)``; the first generator output is
    the acceptance threshold, the second the candidate.
    """
    path = i + INDEX_OFFSET if config.remap_indices else i
    if path < 1:
        raise ValueError(f"path index {i} maps to {path}; must be >= 1")
    span = config.support_high - config.support_low
    for k in range(config.max_retries):
        p_act, u = _uniform_pair(seed(SeedKey(path, t, k)), stream)
        candidate = config.support_low + span * u
        if _pdf(candidate) / config.density_normalizer > p_act:
            return candidate
    raise RetriesExhausted(f"Reached maximum number of retries ({config.max_retries}).")


def delta_w(i: int, t: int, dt: float, config: SamplerConfig = DEFAULT_SAMPLER,
            stream: int = STOCK) -> float:
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    return sample_standard(i, t, config, stream) * math.sqrt(dt)


def correlated_increments(i: int, t: int, dt: float, rho: float,
                          config: SamplerConfig = DEFAULT_SAMPLER,
                          stream: int = STOCK) -> tuple[float, float]:
    """(dW_S, dW_v) for the Heston model; dW_S is the plain GBM draw."""
    z_s = sample_standard(i, t, config, stream)
    z_v = sample_standard(i, t, config, stream + VARIANCE)
    root_dt = math.sqrt(dt)
    return z_s * root_dt, (rho * z_s + math.sqrt(1.0 - rho * rho) * z_v) * root_dt


def inner_stream(j: int) -> int:
    """Stream tag for secondary (inner) path ``j`` of a nested simulation."""
    return INNER_BASE + 2 * j


def sample_grid(indices, steps, config: SamplerConfig = DEFAULT_SAMPLER,
                stream: int = STOCK) -> np.ndarray:
    """Array of draws with shape (len(indices), len(steps))."""
    indices, steps = list(indices), list(steps)
    out = np.empty((len(indices), len(steps)))
    for a, i in enumerate(indices):
        for b, t in enumerate(steps):
            out[a, b] = sample_standard(i, t, config, stream)
    return out


@dataclass(frozen=True)
class DistributionReport:
    count: int
    ks_statistic: float
    ks_pvalue: float
    chi2_statistic: float
    chi2_pvalue: float
    chi2_bins: int
    mean: float
    variance: float
    skewness: float
    excess_kurtosis: float

    def passes(self, alpha: float = 0.01) -> bool:
        return self.ks_pvalue > alpha and self.chi2_pvalue > alpha

    def to_dict(self) -> dict:
        return asdict(self)


def distribution_report(samples, bins: int = 64, low: float = -4.5,
                        high: float = 4.5) -> DistributionReport:
    """KS against N(0, 1), chi-square over equal-probability bins of the
    normal truncated to [low, high], and the first four moments."""
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1 or x.size < 1000:
        raise ValueError(f"need at least 1000 samples, got {x.size}")
    ks = stats.kstest(x, "norm")
    edges = stats.truncnorm.ppf(np.linspace(0.0, 1.0, bins + 1), low, high)
    edges[0], edges[-1] = -np.inf, np.inf
    observed, _ = np.histogram(x, bins=edges)
    expected = np.full(bins, x.size / bins)
    chi2 = stats.chisquare(observed, expected)
    return DistributionReport(
        count=int(x.size),
        ks_statistic=float(ks.statistic),
        ks_pvalue=float(ks.pvalue),
        chi2_statistic=float(chi2.statistic),
        chi2_pvalue=float(chi2.pvalue),
        chi2_bins=bins,
        mean=float(np.mean(x)),
        variance=float(np.var(x, ddof=1)),
        skewness=float(stats.skew(x)),
        excess_kurtosis=float(stats.kurtosis(x)),
    )
