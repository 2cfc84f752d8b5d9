"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 resource error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__, chaosrng
from .analytic import bins_price, market_bs_call
from .emulator import EmulationConfig, simulate
from .experiments import ConfigError, load_config, rng_grid, run_experiment, summarize
from .fixedpoint import RegisterLayout, codecs_for_layout, default_codecs
from .market import HestonParams, MarketConfig
from .qae import scaling_slopes, scaling_sweep
from .risk import (ResourceError, RiskSpec, expiry_threshold_probability, nested_layout,
                   nested_risk_probability, quantum_nested_pipeline)
from .statevector import dump_state, option_price, run_pipeline

EXIT_OK, EXIT_CONFIG, EXIT_RESOURCE = 0, 2, 3
MAX_STATEVECTOR_INDEX_BITS = 12


def _market_args(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("market")
    g.add_argument("--s0", type=float, default=100.0)
    g.add_argument("--sigma", type=float, default=0.4)
    g.add_argument("--strike", type=float, default=100.0)
    g.add_argument("--mu", type=float, default=0.05)
    g.add_argument("--rate", type=float, default=None, help="discount rate (defaults to mu)")
    g.add_argument("--total-time", type=float, default=1.0)
    g.add_argument("--steps", type=int, default=100)
    g.add_argument("--heston", type=float, nargs=5, metavar=("KAPPA", "THETA", "XI", "RHO", "V0"),
                   default=None)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", default=None, help="output file (default: stdout)")
    p.add_argument("--format", choices=["csv"], default="csv")


def _market(ns) -> MarketConfig:
    heston = HestonParams(*ns.heston) if ns.heston else None
    return MarketConfig(s0=ns.s0, sigma=ns.sigma, strike=ns.strike, mu=ns.mu, rate=ns.rate,
                        total_time=ns.total_time, steps=ns.steps, heston=heston)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcqp", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"mcqp {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("price", help="price a European call")
    _market_args(p)
    _common(p)
    p.add_argument("--model", choices=["mc", "bins", "bs", "statevector"], default="mc")
    p.add_argument("--paths", type=int, default=10000)
    p.add_argument("--bits", type=int, default=None, help="register bits (mc: rounding; bins: k)")
    p.add_argument("--index-bits", type=int, default=4, help="statevector index register width")
    p.add_argument("--rng", choices=["chaos", "reference"], default="reference")
    p.add_argument("--dump-paths", default=None, help="mc only: write per-path payoffs as CSV")

    p = sub.add_parser("experiment", help="run a JSON experiment spec")
    p.add_argument("spec_file")
    _common(p)

    p = sub.add_parser("rng-test", help="distribution tests on the chaotic-seed sampler")
    _common(p)
    p.add_argument("--indices", type=int, default=1000)
    p.add_argument("--first-index", type=int, default=0)
    p.add_argument("--time-steps", type=int, default=100)
    p.add_argument("--dump", default=None, help="write raw draws (one per line, repr) here")

    p = sub.add_parser("qae-sweep", help="MLAE vs Bernoulli sampling error scaling")
    _common(p)
    p.add_argument("--a", type=float, default=0.3)
    p.add_argument("--powers", type=int, nargs="+", default=[0, 1, 2, 4, 8, 16])
    p.add_argument("--shots", type=int, default=100)
    p.add_argument("--repetitions", type=int, default=200)

    p = sub.add_parser("risk", help="threshold risk probabilities")
    _market_args(p)
    _common(p)
    p.add_argument("--mode", choices=["expiry-threshold", "nested-classical", "nested-quantum"],
                   default="expiry-threshold")
    p.add_argument("--epsilon", type=float, default=0.0)
    p.add_argument("--tau", type=float, default=0.5)
    p.add_argument("--paths", type=int, default=100000)
    p.add_argument("--outer", type=int, default=1000)
    p.add_argument("--inner", type=int, default=1000)
    p.add_argument("--index-bits", type=int, default=2)
    p.add_argument("--bits", type=int, default=None)
    p.add_argument("--rng", choices=["chaos", "reference"], default="reference")

    p = sub.add_parser("state-dump", help="dump the final pipeline statevector as CSV")
    _market_args(p)
    _common(p)
    p.add_argument("--index-bits", type=int, default=2)
    p.add_argument("--bits", type=int, default=4)
    return parser


def _open_out(path):
    if path is None:
        return sys.stdout
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    return open(path, "w", newline="")


def _write_rows(path, header, rows, meta=None):
    fh = _open_out(path)
    try:
        for k, v in (meta or {}).items():
            fh.write(f"# {k}: {v}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])
    finally:
        if fh is not sys.stdout:
            fh.close()


def cmd_price(ns) -> int:
    market = _market(ns)
    meta = {"mcqp_version": __version__, "model": ns.model, "market": json.dumps(market.to_dict())}
    if ns.model == "bs":
        if market.is_heston:
            raise ValueError("no closed form for the Heston model")
        value, se, clamps = market_bs_call(market), 0.0, 0
    elif ns.model == "bins":
        value, se, clamps = bins_price(market, ns.bits or 5), 0.0, 0
    elif ns.model == "mc":
        codecs = None
        if ns.bits is not None:
            codecs = default_codecs(market, ns.bits, vol_bits=ns.bits if market.is_heston else None,
                                    vol_variable_bits=ns.bits if market.is_heston else None)
        res = simulate(EmulationConfig(market, ns.paths, codecs, rng=ns.rng, seed=ns.seed,
                                       keep_paths=bool(ns.dump_paths), threads=ns.threads))
        if ns.dump_paths:
            _write_rows(ns.dump_paths, ["path", "final_price", "payoff"],
                        [[k, float(s), float(v)] for k, (s, v) in
                         enumerate(zip(res.final_prices, res.payoffs))])
        value, se, clamps = res.price, res.standard_error, res.clamp_count
        meta.update(rng=ns.rng, generator=chaosrng.GENERATOR, seed=ns.seed)
    else:
        if ns.index_bits > MAX_STATEVECTOR_INDEX_BITS:
            raise ResourceError(f"--index-bits {ns.index_bits} exceeds {MAX_STATEVECTOR_INDEX_BITS}")
        bits = ns.bits or 5
        vol = bits if market.is_heston else 0
        layout = RegisterLayout(ns.index_bits, bits, bits, bits, market.steps, vol_bits=vol,
                                vol_variable_bits=vol)
        state = run_pipeline(layout, market, codecs_for_layout(market, layout))
        value, se, clamps = option_price(state), 0.0, state.clamps
        meta.update(generator=chaosrng.GENERATOR)
    _write_rows(ns.out, ["model", "price", "standard_error", "clamps"],
                [[ns.model, value, se, clamps]], meta)
    return EXIT_OK


def cmd_experiment(ns) -> int:
    spec = load_config(ns.spec_file)
    if ns.seed:
        spec.rng["seed"] = ns.seed
    out = ns.out if ns.out is not None else spec.output
    rows = run_experiment(spec, threads=ns.threads, out=out if out is not None else sys.stdout)
    if out is not None:
        summarize(rows, sys.stderr)
    return EXIT_OK


def cmd_rng_test(ns) -> int:
    grid = rng_grid(ns.first_index, ns.indices, ns.time_steps, ns.threads)
    report = chaosrng.distribution_report(grid.ravel())
    if ns.dump:
        with open(ns.dump, "w") as fh:
            fh.writelines(f"{v!r}\n" for v in grid.ravel())
    d = report.to_dict()
    d["passes_0.01"] = report.passes(0.01)
    meta = {"mcqp_version": __version__, "generator": chaosrng.GENERATOR,
            "sampler": json.dumps(chaosrng.DEFAULT_SAMPLER.to_dict()),
            "indices": f"{ns.first_index}..{ns.first_index + ns.indices - 1}",
            "time_steps": f"0..{ns.time_steps - 1}"}
    _write_rows(ns.out, list(d), [list(d.values())], meta)
    return EXIT_OK if report.passes(0.01) else 1


def cmd_qae_sweep(ns) -> int:
    points = scaling_sweep(ns.a, tuple(ns.powers), ns.shots, ns.repetitions, ns.seed)
    slopes = scaling_slopes(points)
    rows = [[p.method, " ".join(map(str, p.powers)), p.oracle_calls, p.rmse, slopes[p.method]]
            for p in points]
    _write_rows(ns.out, ["method", "powers", "oracle_calls", "rmse", "fitted_slope"], rows,
                {"mcqp_version": __version__, "a": ns.a, "shots": ns.shots,
                 "repetitions": ns.repetitions, "seed": ns.seed})
    return EXIT_OK


def cmd_risk(ns) -> int:
    market = _market(ns)
    codecs = default_codecs(market, ns.bits) if ns.bits else None
    meta = {"mcqp_version": __version__, "mode": ns.mode, "epsilon": ns.epsilon,
            "market": json.dumps(market.to_dict()), "rng": ns.rng, "seed": ns.seed}
    if ns.mode == "expiry-threshold":
        res = expiry_threshold_probability(market, ns.epsilon, ns.paths, codecs, ns.rng, ns.seed,
                                           ns.threads)
        _write_rows(ns.out, ["probability", "standard_error", "num_paths"],
                    [[res.probability, res.standard_error, res.num_paths]], meta)
        return EXIT_OK
    spec = RiskSpec(ns.tau, ns.epsilon, ns.outer, ns.inner)
    if ns.mode == "nested-classical":
        res = nested_risk_probability(market, spec, codecs, ns.rng, ns.seed)
        values, prices = res.values, res.outer_prices
    else:
        layout = nested_layout(ns.index_bits, ns.bits or 5, market.steps)
        res = quantum_nested_pipeline(layout, market, spec)
        values, prices = res.values, np.full(len(res.values), np.nan)
    meta["probability"] = repr(res.probability)
    rows = [[k, float(prices[k]), float(v), int(v < ns.epsilon)] for k, v in enumerate(values)]
    _write_rows(ns.out, ["outer_index", "price_at_tau", "value_at_tau", "below_epsilon"], rows, meta)
    return EXIT_OK


def cmd_state_dump(ns) -> int:
    if ns.index_bits > MAX_STATEVECTOR_INDEX_BITS:
        raise ResourceError(f"--index-bits {ns.index_bits} exceeds {MAX_STATEVECTOR_INDEX_BITS}")
    market = _market(ns)
    vol = ns.bits if market.is_heston else 0
    layout = RegisterLayout(ns.index_bits, ns.bits, ns.bits, ns.bits, market.steps, vol_bits=vol,
                            vol_variable_bits=vol)
    state = run_pipeline(layout, market)
    fh = _open_out(ns.out)
    try:
        fh.write(f"# mcqp_version: {__version__}\n# generator: {chaosrng.GENERATOR}\n")
        fh.write(f"# codecs: {json.dumps(state.circuit.codecs.to_dict(), sort_keys=True)}\n")
        dump_state(state, fh)
    finally:
        if fh is not sys.stdout:
            fh.close()
    return EXIT_OK


COMMANDS = {"price": cmd_price, "experiment": cmd_experiment, "rng-test": cmd_rng_test,
            "qae-sweep": cmd_qae_sweep, "risk": cmd_risk, "state-dump": cmd_state_dump}


def main(argv=None) -> int:
    parser = build_parser()
    ns = parser.parse_args(argv)
    if ns.threads < 1:
        parser.error("--threads must be >= 1")
    try:
        return COMMANDS[ns.command](ns)
    except ConfigError as exc:
        for problem in exc.problems:
            print(f"config error: {problem}", file=sys.stderr)
        return EXIT_CONFIG
    except (ResourceError, MemoryError, chaosrng.RetriesExhausted) as exc:
        print(f"resource error: {exc}", file=sys.stderr)
        return EXIT_RESOURCE
    except (ValueError, FileNotFoundError, OSError, NotImplementedError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
