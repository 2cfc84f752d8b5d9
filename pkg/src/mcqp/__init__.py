"""Path-parallel Monte Carlo option pricing on a simulated register machine."""

__version__ = "0.1.0"

from .analytic import bins_price, bs_call, norm_cdf
from .emulator import EmulationConfig, simulate
from .fixedpoint import CodecSet, FixedPointCodec, RegisterLayout, decode, default_codecs, encode
from .market import HestonParams, MarketConfig
from .statevector import init_state, option_price, run_pipeline

__all__ = [
    "__version__", "bins_price", "bs_call", "norm_cdf", "EmulationConfig", "simulate", "CodecSet",
    "FixedPointCodec", "RegisterLayout", "decode", "default_codecs", "encode", "HestonParams",
    "MarketConfig", "init_state", "option_price", "run_pipeline",
]
