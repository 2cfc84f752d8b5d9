"""Uniform fixed-precision grids for register values.

A :class:`FixedPointCodec` maps a real number to the index of the nearest of
``2**bits`` equally spaced points on ``[lower_bound, upper_bound]`` (both ends
included).  The scalar and array paths use the same float64 operations in the
same order, so a value encoded one way decodes bit-identically the other way.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .market import MarketConfig

MAX_BITS = 62

# Standard-normal sampler support, in units of sqrt(dt).
SUPPORT = 4.5


@dataclass(frozen=True)
class FixedPointCodec:
    lower_bound: float
    upper_bound: float
    bits: int

    def __post_init__(self):
        if not (math.isfinite(self.lower_bound) and math.isfinite(self.upper_bound)):
            raise ValueError("codec bounds must be finite")
        if not self.upper_bound > self.lower_bound:
            raise ValueError(
                f"upper_bound ({self.upper_bound}) must exceed lower_bound ({self.lower_bound})"
            )
        if int(self.bits) != self.bits or not 1 <= self.bits <= MAX_BITS:
            raise ValueError(f"bits must be an integer in [1, {MAX_BITS}], got {self.bits}")

    @property
    def levels(self) -> int:
        return 1 << self.bits

    @property
    def max_code(self) -> int:
        return self.levels - 1

    @property
    def width(self) -> float:
        return self.upper_bound - self.lower_bound

    @property
    def spacing(self) -> float:
        return self.width / self.max_code

    def encode(self, value: float) -> int:
        return encode(value, self)

    def decode(self, code: int) -> float:
        return decode(code, self)

    def quantize(self, value: float) -> float:
        return decode(encode(value, self), self)

    def clamps(self, value: float) -> bool:
        return value < self.lower_bound or value > self.upper_bound

    def to_dict(self) -> dict:
        return {"lower_bound": self.lower_bound, "upper_bound": self.upper_bound, "bits": self.bits}


def encode(value: float, codec: FixedPointCodec) -> int:
    """Index of the grid point nearest ``value``.

    Out-of-range values clamp to the end codes; exact ties go to the higher
    index.
    """
    if not math.isfinite(value):
        raise ValueError(f"cannot encode non-finite value {value!r}")
    if value <= codec.lower_bound:
        return 0
    if value >= codec.upper_bound:
        return codec.max_code
    position = ((value - codec.lower_bound) * codec.max_code) / codec.width
    return min(int(math.floor(position + 0.5)), codec.max_code)


def decode(code: int, codec: FixedPointCodec) -> float:
    if int(code) != code or not 0 <= code <= codec.max_code:
        raise ValueError(f"code {code} out of range for a {codec.bits}-bit codec")
    if code == codec.max_code:
        return codec.upper_bound
    return codec.lower_bound + (float(code) * codec.width) / codec.max_code


def encode_array(values: np.ndarray, codec: FixedPointCodec) -> tuple[np.ndarray, int]:
    """Vectorised :func:`encode`; also returns how many values were clamped."""
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise ValueError("cannot encode non-finite values")
    clamped = int(np.count_nonzero((values < codec.lower_bound) | (values > codec.upper_bound)))
    position = ((values - codec.lower_bound) * codec.max_code) / codec.width
    codes = np.floor(position + 0.5)
    codes = np.where(values <= codec.lower_bound, 0.0, codes)
    codes = np.where(values >= codec.upper_bound, float(codec.max_code), codes)
    codes = np.minimum(codes, float(codec.max_code))
    return codes.astype(np.int64), clamped


def decode_array(codes: np.ndarray, codec: FixedPointCodec) -> np.ndarray:
    codes = np.asarray(codes, dtype=np.int64)
    if codes.size and (codes.min() < 0 or codes.max() > codec.max_code):
        raise ValueError(f"codes out of range for a {codec.bits}-bit codec")
    values = codec.lower_bound + (codes.astype(np.float64) * codec.width) / codec.max_code
    return np.where(codes == codec.max_code, codec.upper_bound, values)


def quantize_array(values: np.ndarray, codec: FixedPointCodec) -> tuple[np.ndarray, int]:
    codes, clamped = encode_array(values, codec)
    return decode_array(codes, codec), clamped


@dataclass(frozen=True)
class RegisterLayout:
    """Qubit widths of one circuit instance.

    ``steps`` is the number of time steps m; the time-step register is
    ``ceil(log2 m)`` qubits wide.  Zero widths mean "register absent".
    """

    index_bits: int
    variable_bits: int
    price_bits: int
    payoff_bits: int
    steps: int
    vol_bits: int = 0
    vol_variable_bits: int = 0
    secondary_index_bits: int = 0
    ancilla: int = 1

    def __post_init__(self):
        for name in ("index_bits", "variable_bits", "price_bits", "payoff_bits", "steps"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("vol_bits", "vol_variable_bits", "secondary_index_bits"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if (self.vol_bits == 0) != (self.vol_variable_bits == 0):
            raise ValueError("vol_bits and vol_variable_bits must be set together")

    @property
    def timestep_bits(self) -> int:
        return (self.steps - 1).bit_length()

    @property
    def dimensions(self) -> int:
        return 2 if self.vol_bits else 1

    @property
    def num_paths(self) -> int:
        return 1 << self.index_bits


def layout_width(layout: RegisterLayout) -> int:
    return (
        layout.index_bits
        + layout.secondary_index_bits
        + layout.variable_bits
        + layout.price_bits
        + layout.payoff_bits
        + layout.vol_bits
        + layout.vol_variable_bits
        + layout.timestep_bits
        + layout.ancilla
    )


@dataclass(frozen=True)
class CodecSet:
    """Codecs for every register that holds a real value."""

    price: FixedPointCodec
    variable: FixedPointCodec
    payoff: FixedPointCodec
    variance: FixedPointCodec | None = None
    vol_variable: FixedPointCodec | None = None

    @property
    def payoff_max(self) -> float:
        return self.payoff.upper_bound

    def to_dict(self) -> dict:
        out = {"price": self.price.to_dict(), "variable": self.variable.to_dict(),
               "payoff": self.payoff.to_dict()}
        if self.variance is not None:
            out["variance"] = self.variance.to_dict()
            out["vol_variable"] = self.vol_variable.to_dict()
        return out

    @classmethod
    def from_dict(cls, data: dict) -> CodecSet:
        return cls(**{k: FixedPointCodec(**v) for k, v in data.items() if v is not None})


def variance_codec(v0: float, theta: float, bits: int) -> FixedPointCodec:
    """Variance grid on [0, ~4*max(v0, theta)] that holds ``v0`` exactly.

    Pinning the initial variance to a grid point keeps the zero-vol-of-vol
    Heston run identical to the GBM run.
    """
    target = 4.0 * max(v0, theta)
    if target <= 0:
        return FixedPointCodec(0.0, 1.0, bits)
    if v0 <= 0:
        return FixedPointCodec(0.0, target, bits)
    max_code = (1 << bits) - 1
    ideal = v0 / target * max_code
    start = min(max(1, round(ideal)), max_code)
    offsets = [d for k in range(64) for d in ((k,) if k == 0 else (k, -k))]
    anchors = [start + d for d in offsets if 1 <= start + d <= max_code][:64]
    for anchor in anchors:
        # scan a few ulps either side for an upper bound with decode(anchor) == v0
        base = v0 * max_code / anchor
        below = above = base
        for _ in range(32):
            for upper in (above, below):
                codec = FixedPointCodec(0.0, upper, bits)
                if decode(anchor, codec) == v0:
                    return codec
            above = math.nextafter(above, math.inf)
            below = math.nextafter(below, -math.inf)
    # the top code decodes to the upper bound itself
    return FixedPointCodec(0.0, v0, bits)


def default_codecs(
    market: MarketConfig,
    price_bits: int,
    variable_bits: int | None = None,
    payoff_bits: int | None = None,
    vol_bits: int | None = None,
    vol_variable_bits: int | None = None,
    price_upper: float | None = None,
) -> CodecSet:
    """Default grids: price on [0, 3*s0], increments on +-4.5*sqrt(dt),
    payoff on [0, price_upper - K]."""
    variable_bits = price_bits if variable_bits is None else variable_bits
    payoff_bits = price_bits if payoff_bits is None else payoff_bits
    price_upper = 3.0 * market.s0 if price_upper is None else price_upper
    root_dt = math.sqrt(market.dt)
    payoff_upper = price_upper - market.strike
    if payoff_upper <= 0:
        # every representable payoff is zero; any positive scale will do
        payoff_upper = price_upper
    codecs = dict(
        price=FixedPointCodec(0.0, price_upper, price_bits),
        variable=FixedPointCodec(-SUPPORT * root_dt, SUPPORT * root_dt, variable_bits),
        payoff=FixedPointCodec(0.0, payoff_upper, payoff_bits),
    )
    if market.heston is not None:
        h = market.heston
        vol_bits = price_bits if vol_bits is None else vol_bits
        vol_variable_bits = variable_bits if vol_variable_bits is None else vol_variable_bits
        spread = SUPPORT * (abs(h.rho) + math.sqrt(1.0 - h.rho * h.rho)) * root_dt
        codecs["variance"] = variance_codec(h.v0, h.theta, vol_bits)
        codecs["vol_variable"] = FixedPointCodec(-spread, spread, vol_variable_bits)
    return CodecSet(**codecs)


def codecs_for_layout(market: MarketConfig, layout: RegisterLayout, **kwargs) -> CodecSet:
    if market.is_heston and not layout.vol_bits:
        raise ValueError("Heston market needs a layout with vol_bits and vol_variable_bits")
    return default_codecs(
        market,
        price_bits=layout.price_bits,
        variable_bits=layout.variable_bits,
        payoff_bits=layout.payoff_bits,
        vol_bits=layout.vol_bits or None,
        vol_variable_bits=layout.vol_variable_bits or None,
        **kwargs,
    )
