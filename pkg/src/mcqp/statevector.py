"""Sparse composite-register simulation of the path-parallel pricing circuit.

A state is a mapping from basis keys (one integer code per register, in
:data:`REGISTER_ORDER`) to complex amplitudes.  Every path-evolution operator
rewrites basis keys branch by branch; no branch is ever put into
superposition except by the final ancilla rotation, so the support stays at
most ``2 * N``.

Operators follow the register-level action of the circuit.  The price
update is a read-modify-write on the grid (decode, multiply, re-encode);
reversible arithmetic is not synthesised, only injectivity on the reachable
support is checked.  The time-step register is accounted for in
:func:`~mcqp.fixedpoint.layout_width` but passed here as a classical ``t``.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

from . import chaosrng
from .chaosrng import DEFAULT_SAMPLER, SamplerConfig
from .fixedpoint import CodecSet, RegisterLayout, codecs_for_layout, decode, encode
from .market import MarketConfig

REGISTER_ORDER = ("index", "secondary", "variable", "price", "vol_variable", "variance",
                  "payoff", "ancilla")

NORM_TOL = 1e-12


class ContractViolation(RuntimeError):
    """An operator was applied to a state outside its precondition."""


class ConfigurationWarning(UserWarning):
    pass


@dataclass(frozen=True)
class Circuit:
    layout: RegisterLayout
    market: MarketConfig
    codecs: CodecSet
    sampler: SamplerConfig = DEFAULT_SAMPLER

    def registers(self) -> tuple[tuple[str, int], ...]:
        lay = self.layout
        widths = {
            "index": lay.index_bits,
            "secondary": lay.secondary_index_bits,
            "variable": lay.variable_bits,
            "price": lay.price_bits,
            "vol_variable": lay.vol_variable_bits,
            "variance": lay.vol_bits,
            "payoff": lay.payoff_bits,
            "ancilla": lay.ancilla,
        }
        return tuple((name, widths[name]) for name in REGISTER_ORDER if widths[name])

    def codec(self, register: str):
        return getattr(self.codecs, register)


@dataclass(frozen=True)
class QState:
    circuit: Circuit
    amplitudes: dict
    clamps: int = 0
    registers: tuple = field(default=())

    def __post_init__(self):
        if not self.registers:
            object.__setattr__(self, "registers", self.circuit.registers())

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.registers)

    def position(self, name: str) -> int:
        return self.names.index(name)

    def norm_squared(self) -> float:
        return math.fsum(abs(a) ** 2 for a in self.amplitudes.values())

    @property
    def support_size(self) -> int:
        return len(self.amplitudes)

    def items(self):
        """(key, amplitude) pairs in canonical (bit-string) order."""
        return sorted(self.amplitudes.items())

    def branch(self, key) -> dict[str, int]:
        return dict(zip(self.names, key))

    def bitstring(self, key) -> str:
        return "".join(format(code, f"0{width}b") for code, (_, width) in zip(key, self.registers))

    def with_amplitudes(self, amplitudes: dict, extra_clamps: int = 0) -> QState:
        return replace(self, amplitudes=amplitudes, clamps=self.clamps + extra_clamps)


def init_state(layout: RegisterLayout, market: MarketConfig, codecs: CodecSet | None = None,
               sampler: SamplerConfig = DEFAULT_SAMPLER) -> QState:
    """Uniform superposition over the index register(s); price holds S0."""
    codecs = codecs_for_layout(market, layout) if codecs is None else codecs
    circuit = Circuit(layout, market, codecs, sampler)
    if codecs.price.clamps(market.s0):
        warnings.warn(f"s0={market.s0} lies outside the price grid and was clamped",
                      ConfigurationWarning, stacklevel=2)
    base = {name: 0 for name in REGISTER_ORDER}
    base["price"] = encode(market.s0, codecs.price)
    if market.is_heston:
        if codecs.variance.clamps(market.heston.v0):
            warnings.warn("v0 lies outside the variance grid and was clamped",
                          ConfigurationWarning, stacklevel=2)
        base["variance"] = encode(market.heston.v0, codecs.variance)
    outer = 1 << layout.index_bits
    inner = 1 << layout.secondary_index_bits
    amp = complex(1.0 / math.sqrt(outer * inner))
    names = [name for name, _ in circuit.registers()]
    amplitudes = {}
    for i in range(outer):
        for j in range(inner):
            base["index"], base["secondary"] = i, j
            amplitudes[tuple(base[n] for n in names)] = amp
    return QState(circuit, amplitudes)


def _rewrite(state: QState, update: Callable[[dict[str, int]], tuple[dict[str, int], int]]) -> QState:
    """Apply a per-branch basis rewrite and check it is injective."""
    names = state.names
    out = {}
    clamps = 0
    for key, amp in state.amplitudes.items():
        regs, clamped = update(dict(zip(names, key)))
        clamps += clamped
        new_key = tuple(regs[n] for n in names)
        if new_key in out:
            raise ContractViolation("operator mapped two basis states to the same basis state")
        out[new_key] = amp
    return state.with_amplitudes(out, clamps)


def _increment_codes(state: QState, regs: dict[str, int], t: int, inner: bool) -> dict[str, int]:
    circ = state.circuit
    market, codecs = circ.market, circ.codecs
    i = regs["index"]
    stream = chaosrng.inner_stream(regs["secondary"]) if inner else chaosrng.STOCK
    if market.is_heston:
        dw_s, dw_v = chaosrng.correlated_increments(i, t, market.dt, market.heston.rho,
                                                    circ.sampler, stream)
        return {"variable": encode(dw_s, codecs.variable),
                "vol_variable": encode(dw_v, codecs.vol_variable)}
    dw = chaosrng.delta_w(i, t, market.dt, circ.sampler, stream)
    return {"variable": encode(dw, codecs.variable)}


def apply_R(state: QState, t: int, inner: bool = False) -> QState:
    """Write the step-``t`` increment code(s) into the zeroed variable register(s).

    Heston circuits write both correlated increments.  ``inner`` keys the draw
    by the secondary index as well (nested simulation after the split time).
    """
    def update(regs):
        for name, code in _increment_codes(state, regs, t, inner).items():
            if regs[name] != 0:
                raise ContractViolation(f"{name} register must be zero before R")
            regs[name] ^= code
        return regs, 0
    return _rewrite(state, update)


def apply_R_inv(state: QState, t: int, inner: bool = False) -> QState:
    def update(regs):
        for name, code in _increment_codes(state, regs, t, inner).items():
            if regs[name] != code:
                raise ContractViolation(f"{name} register does not hold the step-{t} draw")
            regs[name] ^= code
        return regs, 0
    return _rewrite(state, update)


def _evolve_price(price: float, mu: float, dt: float, vol: float, w: float) -> float:
    return price * (1.0 + mu * dt + vol * w)


def apply_T(state: QState) -> QState:
    """S <- S * (1 + mu dt + vol dW); vol is sigma, or sqrt(variance) for Heston."""
    circ = state.circuit
    market, codecs = circ.market, circ.codecs
    dt = market.dt

    def update(regs):
        price = decode(regs["price"], codecs.price)
        w = decode(regs["variable"], codecs.variable)
        if market.is_heston:
            vol = math.sqrt(decode(regs["variance"], codecs.variance))
        else:
            vol = market.sigma
        value = _evolve_price(price, market.mu, dt, vol, w)
        regs["price"] = encode(value, codecs.price)
        return regs, int(codecs.price.clamps(value))
    return _rewrite(state, update)


def _evolve_variance(nu: float, kappa: float, theta: float, xi: float, dt: float,
                     w: float) -> float:
    return nu + kappa * (theta - nu) * dt + xi * math.sqrt(nu) * w


def apply_V(state: QState) -> QState:
    """Full-truncation Euler step of the variance register (Heston only)."""
    circ = state.circuit
    market, codecs = circ.market, circ.codecs
    if not market.is_heston:
        raise ContractViolation("V is only defined for Heston circuits")
    h = market.heston

    def update(regs):
        nu = max(decode(regs["variance"], codecs.variance), 0.0)
        w = decode(regs["vol_variable"], codecs.vol_variable)
        value = max(0.0, _evolve_variance(nu, h.kappa, h.theta, h.xi, market.dt, w))
        regs["variance"] = encode(value, codecs.variance)
        return regs, int(codecs.variance.clamps(value))
    return _rewrite(state, update)


def apply_P(state: QState) -> QState:
    """Write max(S - K, 0) into the zeroed payoff register."""
    circ = state.circuit
    codecs, strike = circ.codecs, circ.market.strike

    def update(regs):
        if regs["payoff"] != 0:
            raise ContractViolation("payoff register must be zero before P")
        value = max(decode(regs["price"], codecs.price) - strike, 0.0)
        regs["payoff"] = encode(value, codecs.payoff)
        return regs, int(codecs.payoff.clamps(value))
    return _rewrite(state, update)


def rotate_ancilla(state: QState, fraction: Callable[[dict[str, int]], float],
                   ancilla: str = "ancilla") -> QState:
    """Split each branch a -> a*sqrt(1-p)|0> + a*sqrt(p)|1> with p = fraction(branch)."""
    names = state.names
    pos = names.index(ancilla)
    out = {}
    for key, amp in state.amplitudes.items():
        if key[pos] != 0:
            raise ContractViolation(f"{ancilla} must be |0> before the amplitude encoding")
        p = fraction(dict(zip(names, key)))
        if not 0.0 <= p <= 1.0:
            raise ContractViolation(f"normalised value {p} outside [0, 1]")
        if p < 1.0:
            out[key] = amp * math.sqrt(1.0 - p)
        if p > 0.0:
            out[key[:pos] + (1,) + key[pos + 1:]] = amp * math.sqrt(p)
    return state.with_amplitudes(out)


def apply_M(state: QState, payoff_max: float | None = None) -> QState:
    """Encode each branch's payoff / payoff_max on the ancilla."""
    codec = state.circuit.codecs.payoff
    payoff_max = codec.upper_bound if payoff_max is None else payoff_max
    if not payoff_max > 0:
        raise ContractViolation("payoff_max must be positive")
    return rotate_ancilla(state, lambda regs: decode(regs["payoff"], codec) / payoff_max)


def evolve_paths(state: QState, steps: Iterable[int], inner: bool = False) -> QState:
    """Repeat the per-step block (R, [V], T, R^-1) for each step in ``steps``."""
    heston = state.circuit.market.is_heston
    for t in steps:
        state = apply_R(state, t, inner)
        if heston:
            state = apply_V(state)
        state = apply_T(state)
        state = apply_R_inv(state, t, inner)
    return state


def run_pipeline(layout: RegisterLayout, market: MarketConfig, codecs: CodecSet | None = None,
                 sampler: SamplerConfig = DEFAULT_SAMPLER) -> QState:
    if market.is_heston != bool(layout.vol_bits):
        raise ValueError("Heston registers must be present exactly when the market is Heston")
    state = init_state(layout, market, codecs, sampler)
    state = evolve_paths(state, range(market.steps))
    return apply_M(apply_P(state))


def ancilla_one_probability(state: QState, ancilla: str = "ancilla") -> float:
    pos = state.position(ancilla)
    return math.fsum(abs(a) ** 2 for key, a in state.amplitudes.items() if key[pos] == 1)


def option_price(state: QState) -> float:
    """Discounted price read off the ancilla probability."""
    circ = state.circuit
    return ancilla_one_probability(state) * circ.codecs.payoff_max * circ.market.discount


def decoded_registers(state: QState, key) -> dict[str, float]:
    out = {}
    for name, code in zip(state.names, key):
        codec = getattr(state.circuit.codecs, name, None) if name not in ("index", "secondary", "ancilla") else None
        if codec is not None:
            out[name] = decode(code, codec)
    return out


def dump_state(state: QState, out: io.TextIOBase | None = None) -> str:
    """CSV with one row per basis state: index bits, hex codes, decoded values,
    amplitude (re, im).  Rows are in canonical order."""
    buf = io.StringIO() if out is None else out
    writer = csv.writer(buf, lineterminator="\n")
    names = state.names
    value_names = [n for n in names if n not in ("index", "secondary", "ancilla")]
    header = ["index_bits"]
    if "secondary" in names:
        header.append("secondary_bits")
    header += [f"{n}_code" for n in names] + [f"{n}_value" for n in value_names] + ["amp_re", "amp_im"]
    writer.writerow(header)
    widths = dict(state.registers)
    for key, amp in state.items():
        regs = dict(zip(names, key))
        row = [format(regs["index"], f"0{widths['index']}b")]
        if "secondary" in names:
            row.append(format(regs["secondary"], f"0{widths['secondary']}b"))
        row += [hex(regs[n]) for n in names]
        values = decoded_registers(state, key)
        row += [repr(values[n]) for n in value_names]
        row += [repr(amp.real), repr(amp.imag)]
        writer.writerow(row)
    return buf.getvalue() if out is None else ""
