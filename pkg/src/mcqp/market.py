"""Market and model parameters shared by every pricing route."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace


@dataclass(frozen=True)
class HestonParams:
    kappa: float
    theta: float
    xi: float
    rho: float
    v0: float

    def __post_init__(self):
        if self.v0 < 0:
            raise ValueError(f"heston.v0 must be >= 0, got {self.v0}")
        if self.theta < 0:
            raise ValueError(f"heston.theta must be >= 0, got {self.theta}")
        if self.xi < 0:
            raise ValueError(f"heston.xi must be >= 0, got {self.xi}")
        if abs(self.rho) > 1:
            raise ValueError(f"heston.rho must satisfy |rho| <= 1, got {self.rho}")


@dataclass(frozen=True)
class MarketConfig:
    """European call under GBM (or Heston when ``heston`` is set).

    ``rate`` defaults to ``mu`` (risk-neutral pricing).
    """

    s0: float
    sigma: float
    strike: float
    mu: float = 0.05
    total_time: float = 1.0
    steps: int = 100
    rate: float | None = None
    heston: HestonParams | None = field(default=None)

    def __post_init__(self):
        errors = []
        if not self.s0 > 0:
            errors.append(f"s0 must be > 0, got {self.s0}")
        if not self.sigma >= 0:
            errors.append(f"sigma must be >= 0, got {self.sigma}")
        if not self.total_time > 0:
            errors.append(f"total_time must be > 0, got {self.total_time}")
        if int(self.steps) != self.steps or self.steps < 1:
            errors.append(f"steps must be an integer >= 1, got {self.steps}")
        if not self.strike >= 0:
            errors.append(f"strike must be >= 0, got {self.strike}")
        for name in ("s0", "sigma", "strike", "mu", "total_time"):
            if not math.isfinite(getattr(self, name)):
                errors.append(f"{name} must be finite")
        if errors:
            raise ValueError("; ".join(errors))
        if self.rate is None:
            object.__setattr__(self, "rate", self.mu)
        if isinstance(self.heston, dict):
            object.__setattr__(self, "heston", HestonParams(**self.heston))

    @property
    def dt(self) -> float:
        return self.total_time / self.steps

    @property
    def discount(self) -> float:
        return math.exp(-self.rate * self.total_time)

    @property
    def is_heston(self) -> bool:
        return self.heston is not None

    def replace(self, **changes) -> MarketConfig:
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return asdict(self)
