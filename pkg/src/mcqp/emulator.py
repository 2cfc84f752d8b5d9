"""Vectorised classical emulation of the path-parallel circuit.

Each path index ``i`` is simulated exactly as one branch of the statevector
pipeline: every stored value (increment, price, variance, payoff) is rounded
to its register grid, using the same float64 operations in the same order, so
on overlapping scales the per-path payoffs agree bit for bit.  With
``codecs=None`` rounding is switched off.

Paths are processed in fixed chunks of :data:`CHUNK` indices and the chunk
statistics are merged in a fixed pairwise tree, so results do not depend on
the number of worker threads.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import chaosrng
from .chaosrng import DEFAULT_SAMPLER, SamplerConfig
from .fixedpoint import CodecSet, FixedPointCodec, quantize_array
from .market import MarketConfig

CHUNK = 4096
RNG_MODES = ("chaos", "reference")

Draws = Callable[[int], tuple[np.ndarray, np.ndarray | None]]


@dataclass(frozen=True)
class EmulationConfig:
    market: MarketConfig
    num_paths: int
    codecs: CodecSet | None = None
    rng: str = "chaos"
    seed: int = 0
    sampler: SamplerConfig = DEFAULT_SAMPLER
    first_index: int = 0
    keep_paths: bool = False
    threads: int = 1

    def __post_init__(self):
        if self.num_paths < 1:
            raise ValueError("num_paths must be >= 1")
        if self.rng not in RNG_MODES:
            raise ValueError(f"rng must be one of {RNG_MODES}, got {self.rng!r}")
        if self.codecs is not None and self.market.is_heston and self.codecs.variance is None:
            raise ValueError("rounded Heston emulation needs variance and vol_variable codecs")
        if self.first_index < 0:
            raise ValueError("first_index must be >= 0")

    @property
    def rounded(self) -> bool:
        return self.codecs is not None


@dataclass
class PathResult:
    mean_payoff: float
    std_payoff: float
    clamp_count: int
    num_paths: int
    discount: float = 1.0
    payoffs: np.ndarray | None = field(default=None, repr=False)
    final_prices: np.ndarray | None = field(default=None, repr=False)

    @property
    def price(self) -> float:
        return self.mean_payoff * self.discount

    @property
    def standard_error(self) -> float:
        """Standard error of the discounted price."""
        return self.std_payoff / math.sqrt(self.num_paths) * self.discount


class _Rounder:
    def __init__(self):
        self.clamps = 0

    def __call__(self, values: np.ndarray, codec: FixedPointCodec | None) -> np.ndarray:
        if codec is None:
            return values
        out, clamped = quantize_array(values, codec)
        self.clamps += clamped
        return out


def chaos_draws(indices: np.ndarray, market: MarketConfig, sampler: SamplerConfig = DEFAULT_SAMPLER,
                streams: np.ndarray | None = None) -> Draws:
    """Increments for the given path indices from the chaotic-seed sampler."""
    indices = [int(i) for i in indices]
    streams = [chaosrng.STOCK] * len(indices) if streams is None else [int(s) for s in streams]
    dt = market.dt

    def draws(t):
        if market.is_heston:
            rho = market.heston.rho
            pairs = [chaosrng.correlated_increments(i, t, dt, rho, sampler, s)
                     for i, s in zip(indices, streams)]
            return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])
        return np.array([chaosrng.delta_w(i, t, dt, sampler, s) for i, s in zip(indices, streams)]), None
    return draws


def reference_draws(size: int, steps, market: MarketConfig, entropy) -> Draws:
    """Increments from a seeded Philox stream (normal, untruncated)."""
    steps = list(steps)
    gen = np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
    root_dt = math.sqrt(market.dt)
    z = gen.standard_normal((len(steps), size))
    zv = gen.standard_normal((len(steps), size)) if market.is_heston else None
    row = {t: r for r, t in enumerate(steps)}

    def draws(t):
        k = row[t]
        if zv is None:
            return z[k] * root_dt, None
        rho = market.heston.rho
        return z[k] * root_dt, (rho * z[k] + math.sqrt(1.0 - rho * rho) * zv[k]) * root_dt
    return draws


def evolve(prices: np.ndarray, market: MarketConfig, steps, draws: Draws,
           codecs: CodecSet | None = None, variance: np.ndarray | None = None,
           rounder: _Rounder | None = None) -> tuple[np.ndarray, np.ndarray | None]:
    """Advance prices (and Heston variance) over ``steps``.

    Mirrors the circuit's per-step block: increments stored, variance updated
    (full truncation), then the price updated with the new volatility.
    """
    rnd = _Rounder() if rounder is None else rounder
    cod = codecs
    mu, dt = market.mu, market.dt
    for t in steps:
        w, wv = draws(t)
        w = rnd(w, cod and cod.variable)
        if market.is_heston:
            h = market.heston
            wv = rnd(wv, cod and cod.vol_variable)
            nu = np.maximum(variance, 0.0)
            variance = np.maximum(0.0, nu + h.kappa * (h.theta - nu) * dt + h.xi * np.sqrt(nu) * wv)
            variance = rnd(variance, cod and cod.variance)
            vol = np.sqrt(variance)
        else:
            vol = market.sigma
        prices = rnd(prices * (1.0 + mu * dt + vol * w), cod and cod.price)
    return prices, variance


def initial_state(size: int, market: MarketConfig, codecs: CodecSet | None,
                  rounder: _Rounder) -> tuple[np.ndarray, np.ndarray | None]:
    prices = rounder(np.full(size, float(market.s0)), codecs and codecs.price)
    variance = None
    if market.is_heston:
        variance = rounder(np.full(size, float(market.heston.v0)), codecs and codecs.variance)
    return prices, variance


def call_payoff(prices: np.ndarray, strike: float, codecs: CodecSet | None,
                rounder: _Rounder) -> np.ndarray:
    return rounder(np.maximum(prices - strike, 0.0), codecs and codecs.payoff)


def _run_chunk(config: EmulationConfig, chunk: int):
    start = config.first_index + chunk * CHUNK
    stop = min(start + CHUNK, config.first_index + config.num_paths)
    size = stop - start
    market = config.market
    if config.rng == "chaos":
        draws = chaos_draws(np.arange(start, stop), market, config.sampler)
    else:
        draws = reference_draws(size, range(market.steps), market, [config.seed, chunk])
    rnd = _Rounder()
    prices, variance = initial_state(size, market, config.codecs, rnd)
    prices, _ = evolve(prices, market, range(market.steps), draws, config.codecs, variance, rnd)
    payoffs = call_payoff(prices, market.strike, config.codecs, rnd)
    return payoffs, prices, rnd.clamps


def _chunk_moments(x: np.ndarray) -> tuple[int, float, float]:
    n = x.size
    mean = math.fsum(x.tolist()) / n
    m2 = math.fsum(((x - mean) ** 2).tolist())
    return n, mean, m2


def _merge(a, b):
    na, ma, m2a = a
    nb, mb, m2b = b
    n = na + nb
    delta = mb - ma
    return n, ma + delta * nb / n, m2a + m2b + delta * delta * na * nb / n


def pairwise_reduce(parts: list, combine):
    """Reduce in a fixed balanced tree over the list order."""
    while len(parts) > 1:
        nxt = [combine(parts[k], parts[k + 1]) for k in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            nxt.append(parts[-1])
        parts = nxt
    return parts[0]


def simulate(config: EmulationConfig) -> PathResult:
    chunks = range(math.ceil(config.num_paths / CHUNK))
    if config.threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=config.threads) as pool:
            results = list(pool.map(lambda c: _run_chunk(config, c), chunks))
    else:
        results = [_run_chunk(config, c) for c in chunks]
    n, mean, m2 = pairwise_reduce([_chunk_moments(r[0]) for r in results], _merge)
    std = math.sqrt(m2 / (n - 1)) if n > 1 else 0.0
    out = PathResult(
        mean_payoff=mean,
        std_payoff=std,
        clamp_count=sum(r[2] for r in results),
        num_paths=n,
        discount=config.market.discount,
    )
    if config.keep_paths:
        out.payoffs = np.concatenate([r[0] for r in results])
        out.final_prices = np.concatenate([r[1] for r in results])
    return out


def price(config: EmulationConfig) -> float:
    """Discounted mean payoff."""
    return simulate(config).price
