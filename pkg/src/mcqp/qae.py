"""Maximum-likelihood amplitude estimation on top of the pricing pipeline.

The good-state probability after ``q`` Grover iterates is
``sin^2((2q + 1) * asin(sqrt(a)))``.  It is available in closed form and by
applying the two reflections literally to a simulated pipeline state.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize_scalar
from scipy.special import xlogy

from .statevector import QState, ancilla_one_probability

GRID_POINTS = 1 << 14


@dataclass(frozen=True)
class EstimationSchedule:
    grover_powers: tuple[int, ...]
    shots_per_power: int

    def __post_init__(self):
        powers = tuple(int(q) for q in self.grover_powers)
        object.__setattr__(self, "grover_powers", powers)
        if not powers or 0 not in powers:
            raise ValueError("schedule must include power 0")
        if any(q < 0 for q in powers) or list(powers) != sorted(powers):
            raise ValueError("grover powers must be non-negative and ascending")
        if self.shots_per_power < 1:
            raise ValueError("shots_per_power must be positive")

    @property
    def oracle_calls(self) -> int:
        """Applications of the state-preparation operator, 2q + 1 per shot."""
        return self.shots_per_power * sum(2 * q + 1 for q in self.grover_powers)


def grover_probability(a: float, power: int) -> float:
    if not 0.0 <= a <= 1.0:
        raise ValueError(f"amplitude probability must lie in [0, 1], got {a}")
    theta = math.asin(math.sqrt(a))
    return math.sin((2 * power + 1) * theta) ** 2


# literal reflections on sparse states

def _ancilla_pos(state: QState) -> int:
    return state.position("ancilla")


def reflect_good(state: QState) -> QState:
    """Flip the sign of every basis state with the ancilla in |1>."""
    pos = _ancilla_pos(state)
    return state.with_amplitudes({k: (-a if k[pos] == 1 else a) for k, a in state.amplitudes.items()})


def reflect_about(state: QState, psi: QState) -> QState:
    """(2|psi><psi| - I) applied to ``state``."""
    overlap = sum(psi.amplitudes[k].conjugate() * a for k, a in state.amplitudes.items()
                  if k in psi.amplitudes)
    keys = set(state.amplitudes) | set(psi.amplitudes)
    out = {k: 2 * overlap * psi.amplitudes.get(k, 0j) - state.amplitudes.get(k, 0j) for k in keys}
    return state.with_amplitudes({k: a for k, a in out.items() if a != 0})


def grover_power_state(psi: QState, power: int) -> QState:
    state = psi
    for _ in range(power):
        state = reflect_about(reflect_good(state), psi)
    return state


def closed_form_state(psi: QState, power: int) -> QState:
    """cos((2q+1)t) |bad> + sin((2q+1)t) |good>, with |bad>, |good> the
    normalised projections of ``psi``."""
    pos = _ancilla_pos(psi)
    a = ancilla_one_probability(psi)
    theta = math.asin(math.sqrt(a))
    angle = (2 * power + 1) * theta
    good_scale = math.sin(angle) / math.sqrt(a) if a > 0 else 0.0
    bad_scale = math.cos(angle) / math.sqrt(1 - a) if a < 1 else 0.0
    out = {k: amp * (good_scale if k[pos] == 1 else bad_scale) for k, amp in psi.amplitudes.items()}
    return psi.with_amplitudes(out)


def state_distance(x: QState, y: QState) -> float:
    """Max amplitude difference, up to a global sign."""
    keys = set(x.amplitudes) | set(y.amplitudes)
    best = math.inf
    for sign in (1, -1):
        best = min(best, max((abs(x.amplitudes.get(k, 0j) - sign * y.amplitudes.get(k, 0j))
                              for k in keys), default=0.0))
    return best


# maximum-likelihood estimation

def _log_likelihood(a, powers, hits, shots):
    a = np.clip(np.asarray(a, dtype=np.float64), 0.0, 1.0)
    theta = np.arcsin(np.sqrt(a))
    total = np.zeros_like(theta)
    for q, h in zip(powers, hits):
        p = np.sin((2 * q + 1) * theta) ** 2
        total = total + xlogy(h, p) + xlogy(shots - h, 1.0 - p)
    return total


def mle_from_counts(powers, hits, shots: int) -> float:
    """Grid search over [0, 1] followed by golden-section refinement."""
    # canonical term order, so the estimate does not depend on schedule order
    pairs = sorted(zip(powers, hits))
    powers, hits = [q for q, _ in pairs], [h for _, h in pairs]
    grid = np.linspace(0.0, 1.0, GRID_POINTS)
    ll = _log_likelihood(grid, powers, hits, shots)
    best = int(np.argmax(ll))
    if best == 0 or best == GRID_POINTS - 1:
        return float(grid[best])

    def neg(x):
        return -float(_log_likelihood(x, powers, hits, shots))

    try:
        res = minimize_scalar(neg, bracket=(grid[best - 1], grid[best], grid[best + 1]),
                              method="golden")
    except ValueError:
        return float(grid[best])
    if grid[best - 1] <= res.x <= grid[best + 1] and res.fun <= -ll[best]:
        return float(res.x)
    return float(grid[best])


@dataclass(frozen=True)
class MLAEResult:
    estimate: float
    hits: tuple[int, ...]
    schedule: EstimationSchedule

    @property
    def oracle_calls(self) -> int:
        return self.schedule.oracle_calls


def mlae_estimate(source, schedule: EstimationSchedule, rng_seed: int,
                  repetition: int = 0) -> MLAEResult:
    """Sample Bernoulli counts at each Grover power and return the MLE of a.

    ``source`` is either the target probability or a pipeline state whose
    ancilla-|1> probability is the target.
    """
    a = ancilla_one_probability(source) if isinstance(source, QState) else float(source)
    a = min(max(a, 0.0), 1.0)
    rng = np.random.default_rng([rng_seed, repetition])
    shots = schedule.shots_per_power
    hits = tuple(int(rng.binomial(shots, grover_probability(a, q))) for q in schedule.grover_powers)
    return MLAEResult(mle_from_counts(schedule.grover_powers, hits, shots), hits, schedule)


@dataclass(frozen=True)
class ScalingPoint:
    method: str
    powers: tuple[int, ...]
    oracle_calls: int
    rmse: float


def fit_loglog_slope(x, y) -> float:
    slope, _ = np.polyfit(np.log10(np.asarray(x, float)), np.log10(np.asarray(y, float)), 1)
    return float(slope)


def scaling_sweep(a: float, powers=(0, 1, 2, 4, 8, 16), shots: int = 100, repetitions: int = 200,
                  rng_seed: int = 0) -> list[ScalingPoint]:
    """RMSE against oracle-call budget for MLAE (growing power prefixes) and
    for plain Bernoulli sampling at the same budgets."""
    points = []
    for n in range(1, len(powers) + 1):
        sched = EstimationSchedule(tuple(powers[:n]), shots)
        errs = [mlae_estimate(a, sched, rng_seed, rep).estimate - a for rep in range(repetitions)]
        points.append(ScalingPoint("mlae", sched.grover_powers, sched.oracle_calls,
                                   math.sqrt(np.mean(np.square(errs)))))
    for p in list(points):
        sched = EstimationSchedule((0,), p.oracle_calls)
        errs = [mlae_estimate(a, sched, rng_seed + 1, rep).estimate - a for rep in range(repetitions)]
        points.append(ScalingPoint("classical", (0,), p.oracle_calls,
                                   math.sqrt(np.mean(np.square(errs)))))
    return points


def scaling_slopes(points: list[ScalingPoint]) -> dict[str, float]:
    out = {}
    for method in sorted({p.method for p in points}):
        sel = [p for p in points if p.method == method]
        out[method] = fit_loglog_slope([p.oracle_calls for p in sel], [p.rmse for p in sel])
    return out
