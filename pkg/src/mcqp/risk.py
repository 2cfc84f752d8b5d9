"""Threshold risk metrics: at expiry, and nested at a valuation time tau.

The quantum nested scheme runs N x N branches over an outer index ``i`` and a
secondary index ``j``.  Outer steps (up to tau) are keyed by ``i`` only, inner
steps by ``(i, j)`` through a per-``j`` sampler stream.  The step that turns
per-branch payoffs into a per-``i`` mean held in a register is a simulator
oracle: it reads the branch sub-state directly and has no gate realisation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import chaosrng
from .emulator import (EmulationConfig, _Rounder, call_payoff, chaos_draws, evolve, initial_state,
                       reference_draws, simulate)
from .fixedpoint import CodecSet, RegisterLayout, codecs_for_layout, decode, encode
from .market import MarketConfig
from .statevector import (QState, ancilla_one_probability, apply_M, apply_P, evolve_paths,
                          init_state, rotate_ancilla)

MAX_QUANTUM_INDEX_BITS = 5
OUTER_BLOCK = 64


class ResourceError(RuntimeError):
    pass


@dataclass(frozen=True)
class RiskSpec:
    tau: float
    epsilon: float
    outer_paths: int
    inner_paths: int

    def __post_init__(self):
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.outer_paths < 1 or self.inner_paths < 1:
            raise ValueError("outer_paths and inner_paths must be >= 1")

    def tau_steps(self, market: MarketConfig) -> int:
        if not self.tau < market.total_time:
            raise ValueError("tau must lie strictly inside (0, T)")
        k = round(self.tau / market.dt)
        if abs(k * market.dt - self.tau) > 1e-9 * market.total_time or not 1 <= k < market.steps:
            raise ValueError(f"tau={self.tau} is not on the time grid (dt={market.dt})")
        return k


@dataclass
class ThresholdResult:
    probability: float
    standard_error: float
    num_paths: int
    final_prices: np.ndarray | None = field(default=None, repr=False)


def expiry_threshold_probability(market: MarketConfig, epsilon: float, num_paths: int,
                                 codecs: CodecSet | None = None, rng: str = "reference",
                                 seed: int = 0, threads: int = 1) -> ThresholdResult:
    """Fraction of paths with S_T > K + epsilon, i.e. payoff above epsilon."""
    res = simulate(EmulationConfig(market, num_paths, codecs, rng=rng, seed=seed,
                                   keep_paths=True, threads=threads))
    hits = res.final_prices > market.strike + epsilon
    p = float(np.count_nonzero(hits)) / num_paths
    return ThresholdResult(p, math.sqrt(p * (1 - p) / num_paths), num_paths, res.final_prices)


def branch_mean(payoffs) -> float:
    """Mean payoff over secondary paths, summed exactly in index order."""
    values = [float(v) for v in payoffs]
    return math.fsum(values) / len(values)


def _value_from_mean(mean: float, market: MarketConfig, tau: float,
                     codecs: CodecSet | None) -> float:
    if codecs is not None:
        mean = decode(encode(mean, codecs.payoff), codecs.payoff)
    return math.exp(-market.rate * (market.total_time - tau)) * mean


@dataclass
class NestedResult:
    probability: float
    standard_error: float
    values: np.ndarray = field(repr=False)
    outer_prices: np.ndarray = field(repr=False)
    clamps: int = 0


def nested_risk_probability(market: MarketConfig, spec: RiskSpec, codecs: CodecSet | None = None,
                            rng: str = "chaos", seed: int = 0) -> NestedResult:
    """Classical nested simulation: P(option value at tau < epsilon)."""
    if market.is_heston:
        raise NotImplementedError("nested risk is implemented for the GBM model only")
    k_tau = spec.tau_steps(market)
    n_out, n_in = spec.outer_paths, spec.inner_paths
    outer_steps, inner_steps = range(k_tau), range(k_tau, market.steps)
    rnd = _Rounder()
    values = np.empty(n_out)
    outer_prices = np.empty(n_out)
    for block, start in enumerate(range(0, n_out, OUTER_BLOCK)):
        stop = min(start + OUTER_BLOCK, n_out)
        size = stop - start
        if rng == "chaos":
            outer_draws = chaos_draws(np.arange(start, stop), market)
            idx = np.repeat(np.arange(start, stop), n_in)
            streams = np.tile([chaosrng.inner_stream(j) for j in range(n_in)], size)
            inner_draws = chaos_draws(idx, market, streams=streams)
        elif rng == "reference":
            outer_draws = reference_draws(size, outer_steps, market, [seed, 0, block])
            inner_draws = reference_draws(size * n_in, inner_steps, market, [seed, 1, block])
        else:
            raise ValueError(f"unknown rng mode {rng!r}")
        prices, _ = initial_state(size, market, codecs, rnd)
        prices, _ = evolve(prices, market, outer_steps, outer_draws, codecs, None, rnd)
        outer_prices[start:stop] = prices
        inner, _ = evolve(np.repeat(prices, n_in), market, inner_steps, inner_draws, codecs, None, rnd)
        payoffs = call_payoff(inner, market.strike, codecs, rnd).reshape(size, n_in)
        for r in range(size):
            values[start + r] = _value_from_mean(branch_mean(payoffs[r]), market, spec.tau, codecs)
    p = float(np.count_nonzero(values < spec.epsilon)) / n_out
    return NestedResult(p, math.sqrt(p * (1 - p) / n_out), values, outer_prices, rnd.clamps)


@dataclass
class QuantumNestedResult:
    probability: float
    values: np.ndarray = field(repr=False)
    state: QState = field(repr=False)


def nested_layout(index_bits: int, bits: int, steps: int) -> RegisterLayout:
    return RegisterLayout(index_bits=index_bits, variable_bits=bits, price_bits=bits,
                          payoff_bits=bits, steps=steps, secondary_index_bits=index_bits)


def quantum_nested_pipeline(layout: RegisterLayout, market: MarketConfig, spec: RiskSpec,
                            codecs: CodecSet | None = None) -> QuantumNestedResult:
    """Statevector nested scheme; returns P(value at tau < epsilon) from the
    final ancilla.  ``spec.outer_paths``/``inner_paths`` are ignored in favour
    of the layout's index widths."""
    n = layout.index_bits
    if layout.secondary_index_bits != n:
        raise ValueError("layout needs a secondary index register as wide as the index register")
    if n > MAX_QUANTUM_INDEX_BITS:
        raise ResourceError(f"{n} index bits exceeds the statevector limit of "
                            f"{MAX_QUANTUM_INDEX_BITS} per index register")
    if market.is_heston:
        raise NotImplementedError("nested risk is implemented for the GBM model only")
    codecs = codecs_for_layout(market, layout) if codecs is None else codecs
    k_tau = spec.tau_steps(market)

    state = init_state(layout, market, codecs)
    state = evolve_paths(state, range(k_tau))
    state = evolve_paths(state, range(k_tau, market.steps), inner=True)
    state = apply_P(state)
    state = apply_M(state)  # QDAC1: per-(i, j) normalised payoff on the ancilla

    # QADC (simulator oracle): per-i mean payoff written to a digital register
    names = state.names
    pi, pj, pp, pa = (names.index(r) for r in ("index", "secondary", "payoff", "ancilla"))
    payoff_codes: dict[int, dict[int, int]] = {}
    good = np.zeros(1 << n)
    total = np.zeros(1 << n)
    for key, amp in state.amplitudes.items():
        payoff_codes.setdefault(key[pi], {})[key[pj]] = key[pp]
        weight = abs(amp) ** 2
        total[key[pi]] += weight
        if key[pa] == 1:
            good[key[pi]] += weight
    amp = complex(1.0 / math.sqrt(1 << n))
    values = np.empty(1 << n)
    digital = {}
    for i in range(1 << n):
        codes = payoff_codes[i]
        mean = branch_mean(decode(codes[j], codecs.payoff) for j in sorted(codes))
        analogue = good[i] / total[i] * codecs.payoff_max
        if abs(analogue - mean) > 1e-9 * codecs.payoff_max:
            raise AssertionError(f"ancilla mean {analogue} disagrees with register mean {mean}")
        code = encode(mean, codecs.payoff)
        values[i] = _value_from_mean(mean, market, spec.tau, codecs)
        digital[(i, code, 0, 0)] = amp
    registers = (("index", n), ("mean", layout.payoff_bits), ("rf", 1), ("ancilla", 1))
    state = QState(state.circuit, digital, state.clamps, registers=registers)

    # RF: threshold indicator on the discounted mean
    def risk_flag(key):
        value = _value_from_mean(decode(key[1], codecs.payoff), market, spec.tau, None)
        return int(value < spec.epsilon)
    state = state.with_amplitudes({(k[0], k[1], k[2] ^ risk_flag(k), k[3]): a
                                   for k, a in state.amplitudes.items()})
    # QDAC1 again: encode the indicator on the final ancilla
    state = rotate_ancilla(state, lambda regs: float(regs["rf"]))
    return QuantumNestedResult(ancilla_one_probability(state), values, state)

