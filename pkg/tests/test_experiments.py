import io
import json

import pytest
from hypothesis import given, settings, strategies as st

from mcqp.experiments import (ConfigError, csv_text, drop_runtime, parse_config, run_experiment,
                              serialize)

MINIMAL = json.dumps({"schema_version": 1, "kind": "paths_sweep",
                      "market": {"s0": 100, "sigma": 0.4, "strike": 100},
                      "sweep": {"num_paths": [100]}})


def small(kind="strike_sweep", **over):
    cfg = {"schema_version": 1, "kind": kind,
           "market": {"s0": 100, "sigma": 0.4, "strike": 100, "steps": 10},
           "sweep": {"strike": [90, 110]}, "trials": 3,
           "model": {"methods": ["bins", "mc"], "num_paths": 500}}
    cfg.update(over)
    return parse_config(json.dumps(cfg))


def test_minimal_config_defaults():
    spec = parse_config(MINIMAL)
    assert spec.market["mu"] == 0.05 and spec.market["rate"] == 0.05
    assert spec.market["steps"] == 100 and spec.market["total_time"] == 1.0
    assert spec.trials == 30
    assert spec.rng == {"mode": "reference", "seed": 0}
    assert spec.model["price_upper"] == 300.0
    assert spec.model["bins_bounds"] == [0.0, 300.0]
    assert spec.output is None


def test_round_trip():
    spec = parse_config(MINIMAL)
    assert parse_config(serialize(spec)) == spec
    assert serialize(parse_config(serialize(spec))) == serialize(spec)


def test_syntax_error_location():
    with pytest.raises(ConfigError, match=r"line 2, column"):
        parse_config('{"schema_version": 1,\n  "kind": }')


def test_semantic_errors_are_exhaustive():
    bad = json.dumps({"schema_version": 1, "kind": "strike_sweep",
                      "market": {"s0": 100, "sigma": -0.4, "strike": 100, "steps": 0},
                      "sweep": {"strike": [], "sigma": [0.1]}, "trials": 0,
                      "rng": {"mode": "nope"}})
    with pytest.raises(ConfigError) as err:
        parse_config(bad)
    text = "\n".join(err.value.problems)
    for needle in ("market.sigma", "market.steps", "sweep.strike", "sweep.sigma", "trials", "rng.mode"):
        assert needle in text


def test_unknown_kind_and_version():
    with pytest.raises(ConfigError, match="kind"):
        parse_config(json.dumps({"schema_version": 1, "kind": "banana"}))
    with pytest.raises(ConfigError, match="schema_version"):
        parse_config(MINIMAL.replace('"schema_version": 1', '"schema_version": 2'))


def test_missing_required_market_fields():
    with pytest.raises(ConfigError, match="market.strike"):
        parse_config(json.dumps({"schema_version": 1, "kind": "paths_sweep",
                                 "market": {"s0": 100, "sigma": 0.4},
                                 "sweep": {"num_paths": [10]}}))


@given(st.lists(st.integers(80, 120), min_size=1, max_size=4, unique=True), st.integers(1, 50),
       st.integers(0, 2**31))
@settings(max_examples=30)
def test_round_trip_property(strikes, trials, seed):
    spec = small(sweep={"strike": strikes}, trials=trials, rng={"mode": "chaos", "seed": seed})
    assert parse_config(serialize(spec)) == spec


def test_run_rows_and_csv():
    spec = small()
    rows = run_experiment(spec)
    assert [(r.point["strike"], r.method) for r in rows] == [(90, "bins"), (90, "mc"),
                                                             (110, "bins"), (110, "mc")]
    assert all(r.value_std >= 0 and r.abs_error_std >= 0 for r in rows)
    text = csv_text(spec, rows)
    header = [l for l in text.splitlines() if l.startswith("#")]
    keys = {l[2:].split(":")[0] for l in header}
    assert {"spec_sha256", "rng_mode", "generator", "codecs", "mcqp_version", "numpy_version"} <= keys
    body = [l for l in text.splitlines() if not l.startswith("#")]
    assert body[0].endswith(",runtime_s")


def test_reproducible_bytes(tmp_path):
    spec = small(kind="precision_sweep", sweep={"bits": [4, 6]}, model={"num_paths": 300})
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run_experiment(spec, out=str(a))
    run_experiment(spec, threads=3, out=str(b))
    assert drop_runtime(a.read_text()) == drop_runtime(b.read_text())
    assert "runtime_s" not in drop_runtime(a.read_text())


def test_chaos_mode_rows_use_disjoint_paths():
    spec = small(kind="paths_sweep", sweep={"num_paths": [50]}, rng={"mode": "chaos", "seed": 0},
                 model={"num_paths": 50})
    (row,) = run_experiment(spec)
    assert row.value_std > 0


def test_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError):
        run_experiment(small(), out=str(blocker / "sub" / "out.csv"))


def test_other_kinds_run():
    q = parse_config(json.dumps({"schema_version": 1, "kind": "qae_budget",
                                 "market": {"s0": 100, "sigma": 0.4, "strike": 100},
                                 "sweep": {"powers": [0, 1, 2]},
                                 "model": {"repetitions": 10, "shots": 20}}))
    rows = run_experiment(q)
    assert {r.method for r in rows} == {"mlae", "classical"}
    assert all("fitted_slope" in r.extra for r in rows)

    r = parse_config(json.dumps({"schema_version": 1, "kind": "risk",
                                 "market": {"s0": 100, "sigma": 0.4, "strike": 100, "steps": 4},
                                 "sweep": {"epsilon": [0.0, 10.0]}, "trials": 1,
                                 "model": {"modes": ["expiry-threshold", "nested-classical",
                                                     "nested-quantum"],
                                           "num_paths": 1000, "outer_paths": 8, "inner_paths": 8,
                                           "bits": 4}}))
    rows = run_experiment(r)
    assert len(rows) == 6
    assert all(0.0 <= row.mean_value <= 1.0 for row in rows)

    g = parse_config(json.dumps({"schema_version": 1, "kind": "rng_grid",
                                 "market": {"s0": 100, "sigma": 0.4, "strike": 100},
                                 "model": {"num_indices": 20, "num_steps": 60}}))
    (row,) = run_experiment(g)
    assert row.extra["count"] == 1200


def test_strike_sweep_no_trend():
    # strike sweep: MC errors across strikes stay within a factor of ~2 of each other
    spec = small(sweep={"strike": [80, 90, 100, 110, 120]}, trials=10,
                 model={"methods": ["mc"], "num_paths": 2000})
    errs = [r.mean_abs_error for r in run_experiment(spec)]
    assert max(errs) < 3 * min(errs)
