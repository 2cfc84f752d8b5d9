"""Config-driven sweeps with CSV output.

Config files are JSON objects with ``schema_version: 1``::

    {
      "schema_version": 1,
      "kind": "strike_sweep",
      "market": {"s0": 100, "sigma": 0.4, "strike": 100},
      "sweep": {"strike": [80, 90, 100, 110, 120]},
      "trials": 30,
      "rng": {"mode": "reference", "seed": 0},
      "model": {"methods": ["bins", "mc"], "num_paths": 10000},
      "output": "strikes.csv"
    }

Pricing kinds (``strike_sweep``, ``vol_sweep``, ``paths_sweep``,
``steps_sweep``, ``precision_sweep``) sweep one market or model field and
compare each method against the Black-Scholes value.  ``qae_budget`` runs
the amplitude-estimation sweep; ``risk`` and ``rng_grid`` cover threshold risk
and sampler grids.  Every default is written back into the parsed config and echoed into
the CSV header.  Apart from the ``runtime_s`` column, output is a pure
function of the config file.
"""

from __future__ import annotations

import csv
import hashlib
import io
import itertools
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__, chaosrng
from .analytic import bins_price, bs_call, prob_above
from .emulator import EmulationConfig, simulate
from .fixedpoint import default_codecs
from .market import MarketConfig
from .qae import scaling_slopes, scaling_sweep
from .risk import (RiskSpec, expiry_threshold_probability, nested_layout, nested_risk_probability,
                   quantum_nested_pipeline)

SCHEMA_VERSION = 1

SWEEP_KEYS = {
    "strike_sweep": {"strike"},
    "vol_sweep": {"sigma"},
    "paths_sweep": {"num_paths"},
    "steps_sweep": {"steps"},
    "precision_sweep": {"bits"},
    "qae_budget": {"powers"},
    "risk": {"epsilon"},
    "rng_grid": set(),
}
PRICING_KINDS = {"strike_sweep", "vol_sweep", "paths_sweep", "steps_sweep", "precision_sweep"}

MARKET_DEFAULTS = {"mu": 0.05, "total_time": 1.0, "steps": 100, "rate": None, "heston": None}
MODEL_DEFAULTS = {
    "pricing": {"methods": ["mc"], "num_paths": 10000, "bits": None, "price_upper": None,
                "bins_bits": 5, "bins_bounds": None},
    "qae_budget": {"a": 0.3, "shots": 100, "repetitions": 200},
    "risk": {"modes": ["expiry-threshold"], "num_paths": 100000, "tau": 0.5, "outer_paths": 1000,
             "inner_paths": 1000, "index_bits": 2, "bits": None, "price_upper": None},
    "rng_grid": {"first_index": 0, "num_indices": 1000, "num_steps": 100},
}
RNG_MODES = ("reference", "chaos")


class ConfigError(ValueError):
    """Invalid experiment configuration; ``problems`` lists every violation."""

    def __init__(self, problems: list[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass
class ExperimentSpec:
    kind: str
    market: dict
    sweep: dict
    trials: int
    rng: dict
    model: dict
    output: str | None = None
    schema_version: int = SCHEMA_VERSION

    def market_config(self, **overrides) -> MarketConfig:
        data = {**self.market, **overrides}
        return MarketConfig(**data)

    def to_dict(self) -> dict:
        return asdict(self)

    @property
    def digest(self) -> str:
        return hashlib.sha256(serialize(self).encode()).hexdigest()

    def points(self) -> list[dict]:
        keys = sorted(self.sweep)
        return [dict(zip(keys, combo)) for combo in itertools.product(*(self.sweep[k] for k in keys))]


def _model_group(kind: str) -> str:
    return "pricing" if kind in PRICING_KINDS else kind


def parse_config(text: str) -> ExperimentSpec:
    """Parse and validate a JSON config, filling in every default."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError([f"syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}"])
    if not isinstance(raw, dict):
        raise ConfigError(["config must be a JSON object"])

    problems = []
    allowed = {"schema_version", "kind", "market", "sweep", "trials", "rng", "model", "output"}
    problems += [f"{k}: unknown key" for k in sorted(set(raw) - allowed)]
    if raw.get("schema_version") != SCHEMA_VERSION:
        problems.append(f"schema_version: expected {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    kind = raw.get("kind")
    if kind not in SWEEP_KEYS:
        problems.append(f"kind: unknown experiment kind {kind!r} (expected one of {sorted(SWEEP_KEYS)})")
        raise ConfigError(problems)

    market = {**MARKET_DEFAULTS, **(raw.get("market") or {})}
    for name in ("s0", "sigma", "strike"):
        if name not in market:
            problems.append(f"market.{name}: required")
    problems += _market_problems(market)
    if market.get("rate") is None:
        market["rate"] = market.get("mu")

    sweep = raw.get("sweep") or {}
    if not isinstance(sweep, dict):
        problems.append("sweep: must be an object of name -> list")
        sweep = {}
    for key, values in sweep.items():
        if key not in SWEEP_KEYS[kind]:
            problems.append(f"sweep.{key}: not sweepable for kind {kind!r}")
        if not isinstance(values, list) or not values:
            problems.append(f"sweep.{key}: must be a non-empty list")
    missing = SWEEP_KEYS[kind] - set(sweep)
    problems += [f"sweep.{k}: required for kind {kind!r}" for k in sorted(missing)]

    trials = raw.get("trials", 30)
    if not isinstance(trials, int) or trials < 1:
        problems.append(f"trials: must be an integer >= 1, got {trials!r}")

    rng = {"mode": "reference", "seed": 0, **(raw.get("rng") or {})}
    if rng["mode"] not in RNG_MODES:
        problems.append(f"rng.mode: must be one of {RNG_MODES}, got {rng['mode']!r}")
    if not isinstance(rng["seed"], int) or rng["seed"] < 0:
        problems.append(f"rng.seed: must be a non-negative integer, got {rng['seed']!r}")

    group = _model_group(kind)
    model = {**MODEL_DEFAULTS[group], **(raw.get("model") or {})}
    problems += [f"model.{k}: unknown key" for k in sorted(set(model) - set(MODEL_DEFAULTS[group]))]
    if group == "pricing":
        bad = set(model["methods"]) - {"mc", "bins"}
        if bad:
            problems.append(f"model.methods: unknown methods {sorted(bad)}")
        s0 = market.get("s0", 0) or 0
        if model["price_upper"] is None:
            model["price_upper"] = 3.0 * s0
        if model["bins_bounds"] is None:
            model["bins_bounds"] = [0.0, model["price_upper"]]
    if group == "risk":
        bad = set(model["modes"]) - {"expiry-threshold", "nested-classical", "nested-quantum"}
        if bad:
            problems.append(f"model.modes: unknown modes {sorted(bad)}")
        if model["price_upper"] is None:
            model["price_upper"] = 3.0 * (market.get("s0", 0) or 0)

    output = raw.get("output")
    if output is not None and not isinstance(output, str):
        problems.append("output: must be a path string or null")
    if problems:
        raise ConfigError(problems)
    return ExperimentSpec(kind=kind, market=market, sweep=sweep, trials=trials, rng=rng,
                          model=model, output=output)


def _market_problems(market: dict) -> list[str]:
    out = []
    checks = {
        "s0": lambda v: v > 0, "sigma": lambda v: v >= 0, "strike": lambda v: v >= 0,
        "total_time": lambda v: v > 0, "steps": lambda v: isinstance(v, int) and v >= 1,
        "mu": lambda v: math.isfinite(v),
    }
    for name, ok in checks.items():
        if name in market:
            value = market[name]
            if not isinstance(value, (int, float)) or isinstance(value, bool) or not ok(value):
                out.append(f"market.{name}: invalid value {value!r}")
    unknown = set(market) - {"s0", "sigma", "strike", "mu", "total_time", "steps", "rate", "heston"}
    out += [f"market.{k}: unknown key" for k in sorted(unknown)]
    return out


def serialize(spec: ExperimentSpec) -> str:
    return json.dumps(spec.to_dict(), sort_keys=True, indent=2)


def load_config(path) -> ExperimentSpec:
    return parse_config(Path(path).read_text())


@dataclass
class ResultRow:
    point: dict
    method: str
    mean_value: float
    value_std: float
    mean_abs_error: float
    abs_error_std: float
    reference: float
    trials: int
    clamps: int = 0
    runtime_s: float = 0.0
    extra: dict = field(default_factory=dict)

    def flat(self) -> dict:
        out = dict(self.point)
        out.update(method=self.method, mean_value=self.mean_value, value_std=self.value_std,
                   mean_abs_error=self.mean_abs_error, abs_error_std=self.abs_error_std,
                   reference=self.reference, trials=self.trials, clamps=self.clamps)
        out.update(self.extra)
        out["runtime_s"] = self.runtime_s
        return out


def trial_seed(master: int, *parts: int) -> int:
    return int(np.random.SeedSequence([master, *parts]).generate_state(1, np.uint64)[0])


def _std(values) -> float:
    return float(np.std(values, ddof=1)) if len(values) > 1 else 0.0


def _pricing_point(spec: ExperimentSpec, point: dict, threads: int) -> list[ResultRow]:
    market_fields = {k: v for k, v in point.items() if k in ("strike", "sigma", "steps")}
    model = {**spec.model, **{k: v for k, v in point.items() if k not in market_fields}}
    market = spec.market_config(**market_fields)
    reference = bs_call(market.s0, market.strike, market.rate, market.sigma, market.total_time)
    rows = []
    for method in model["methods"]:
        started = time.perf_counter()
        if method == "bins":
            value = bins_price(market, model["bins_bits"], tuple(model["bins_bounds"]))
            err = abs(value - reference)
            rows.append(ResultRow(point, "bins", value, 0.0, err, 0.0, reference, 1,
                                  runtime_s=time.perf_counter() - started))
            continue
        codecs = None
        if model["bits"] is not None:
            codecs = default_codecs(market, model["bits"], price_upper=model["price_upper"])
        n = model["num_paths"]
        prices, clamps = [], 0
        for trial in range(spec.trials):
            cfg = EmulationConfig(market, n, codecs, rng=spec.rng["mode"],
                                  seed=trial_seed(spec.rng["seed"], trial),
                                  first_index=trial * n, threads=threads)
            res = simulate(cfg)
            prices.append(res.price)
            clamps += res.clamp_count
        errors = [abs(p - reference) for p in prices]
        rows.append(ResultRow(point, "mc", float(np.mean(prices)), _std(prices),
                              float(np.mean(errors)), _std(errors), reference, spec.trials,
                              clamps, time.perf_counter() - started))
    return rows


def _risk_point(spec: ExperimentSpec, point: dict) -> list[ResultRow]:
    model = spec.model
    market = spec.market_config()
    eps = point["epsilon"]
    codecs = None
    if model["bits"] is not None:
        codecs = default_codecs(market, model["bits"], price_upper=model["price_upper"])
    rows = []
    for mode in model["modes"]:
        started = time.perf_counter()
        if mode == "expiry-threshold":
            probs = [expiry_threshold_probability(market, eps, model["num_paths"], codecs,
                                                  spec.rng["mode"], trial_seed(spec.rng["seed"], t)).probability
                     for t in range(spec.trials)]
            reference = prob_above(market, market.strike + eps)
        elif mode == "nested-classical":
            rs = RiskSpec(model["tau"], eps, model["outer_paths"], model["inner_paths"])
            probs = [nested_risk_probability(market, rs, codecs, spec.rng["mode"],
                                             trial_seed(spec.rng["seed"], t)).probability
                     for t in range(spec.trials)]
            reference = math.nan
        else:
            n = model["index_bits"]
            bits = model["bits"] or 5
            layout = nested_layout(n, bits, market.steps)
            rs = RiskSpec(model["tau"], eps, 1 << n, 1 << n)
            probs = [quantum_nested_pipeline(layout, market, rs).probability]
            reference = math.nan
        errors = [abs(p - reference) for p in probs]
        rows.append(ResultRow(point, mode, float(np.mean(probs)), _std(probs), float(np.mean(errors)),
                              _std(errors), reference, len(probs),
                              runtime_s=time.perf_counter() - started))
    return rows


def _qae_rows(spec: ExperimentSpec) -> list[ResultRow]:
    model = spec.model
    started = time.perf_counter()
    points = scaling_sweep(model["a"], tuple(spec.sweep["powers"]), model["shots"],
                           model["repetitions"], spec.rng["seed"])
    slopes = scaling_slopes(points)
    elapsed = time.perf_counter() - started
    return [ResultRow({"powers": " ".join(map(str, p.powers))}, p.method, p.rmse, 0.0, p.rmse, 0.0,
                      model["a"], model["repetitions"], runtime_s=elapsed,
                      extra={"oracle_calls": p.oracle_calls, "fitted_slope": slopes[p.method]})
            for p in points]


def rng_grid(first_index: int, num_indices: int, num_steps: int, threads: int = 1,
             sampler=chaosrng.DEFAULT_SAMPLER) -> np.ndarray:
    """Draws for indices ``first_index ..`` x steps ``0 .. num_steps-1``."""
    indices = list(range(first_index, first_index + num_indices))
    if threads <= 1:
        return chaosrng.sample_grid(indices, range(num_steps), sampler)
    blocks = [indices[k:k + 64] for k in range(0, len(indices), 64)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda b: chaosrng.sample_grid(b, range(num_steps), sampler), blocks))
    return np.vstack(parts)


def _rng_rows(spec: ExperimentSpec, threads: int) -> list[ResultRow]:
    m = spec.model
    started = time.perf_counter()
    grid = rng_grid(m["first_index"], m["num_indices"], m["num_steps"], threads)
    report = chaosrng.distribution_report(grid.ravel())
    return [ResultRow({}, "chaosrng", report.mean, math.sqrt(report.variance), abs(report.mean),
                      0.0, 0.0, 1, runtime_s=time.perf_counter() - started, extra=report.to_dict())]


def run_experiment(spec: ExperimentSpec, threads: int = 1, out=None) -> list[ResultRow]:
    """Run every point of ``spec`` and write the CSV to ``out`` (or ``spec.output``)."""
    if spec.kind in PRICING_KINDS:
        points = spec.points()
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                nested = list(pool.map(lambda p: _pricing_point(spec, p, 1), points))
        else:
            nested = [_pricing_point(spec, p, 1) for p in points]
        rows = [r for group in nested for r in group]
    elif spec.kind == "risk":
        rows = [r for p in spec.points() for r in _risk_point(spec, p)]
    elif spec.kind == "qae_budget":
        rows = _qae_rows(spec)
    elif spec.kind == "rng_grid":
        rows = _rng_rows(spec, threads)
    else:
        raise ConfigError([f"kind: unknown experiment kind {spec.kind!r}"])

    target = out if out is not None else spec.output
    if target is not None:
        if isinstance(target, (str, Path)):
            path = Path(target)
            try:
                path.parent.mkdir(parents=True, exist_ok=True)
                with open(path, "w", newline="") as fh:
                    write_csv(spec, rows, fh)
            except OSError as exc:
                raise OSError(f"cannot write output {path}: {exc}") from exc
        else:
            write_csv(spec, rows, target)
    return rows


def metadata(spec: ExperimentSpec) -> dict:
    meta = {
        "schema_version": spec.schema_version,
        "kind": spec.kind,
        "spec_sha256": spec.digest,
        "rng_mode": spec.rng["mode"],
        "rng_seed": spec.rng["seed"],
        "generator": chaosrng.GENERATOR,
        "mcqp_version": __version__,
        "numpy_version": np.__version__,
        "scipy_version": scipy.__version__,
        "spec": json.dumps(spec.to_dict(), sort_keys=True),
    }
    model = spec.model
    if spec.kind in PRICING_KINDS or spec.kind == "risk":
        bits = spec.sweep.get("bits") or [model.get("bits")]
        codecs = {}
        for b in bits:
            if b is not None:
                codecs[str(b)] = default_codecs(spec.market_config(), b,
                                                price_upper=model["price_upper"]).to_dict()
        meta["codecs"] = json.dumps(codecs, sort_keys=True) if codecs else "unrounded"
    return meta


def write_csv(spec: ExperimentSpec, rows: list[ResultRow], fh) -> None:
    for key, value in metadata(spec).items():
        fh.write(f"# {key}: {value}\n")
    flat = [r.flat() for r in rows]
    columns = []
    for row in flat:
        columns += [c for c in row if c not in columns]
    columns = [c for c in columns if c != "runtime_s"] + ["runtime_s"]
    writer = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n", restval="")
    writer.writeheader()
    for row in flat:
        writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in row.items()})


def csv_text(spec: ExperimentSpec, rows: list[ResultRow]) -> str:
    buf = io.StringIO()
    write_csv(spec, rows, buf)
    return buf.getvalue()


def drop_runtime(text: str) -> str:
    """CSV text with the ``runtime_s`` column removed (for reproducibility checks)."""
    lines = text.splitlines()
    body = [l for l in lines if not l.startswith("#")]
    head = [l for l in lines if l.startswith("#")]
    reader = list(csv.reader(body))
    if not reader:
        return text
    drop = reader[0].index("runtime_s") if "runtime_s" in reader[0] else None
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    for r in reader:
        w.writerow([c for k, c in enumerate(r) if k != drop])
    return "\n".join(head) + "\n" + out.getvalue()


def summarize(rows: list[ResultRow], stream=sys.stdout) -> None:
    for r in rows:
        pt = ", ".join(f"{k}={v}" for k, v in r.point.items())
        stream.write(f"{pt:30s} {r.method:18s} value={r.mean_value:.6g} "
                     f"mean_abs_err={r.mean_abs_error:.4g} std={r.value_std:.4g}\n")
