import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st

from mcqp.analytic import (BinsModel, bins_model, bins_price, bs_call, lognormal_cdf, norm_cdf,
                           norm_pdf, prob_above)
from mcqp.market import MarketConfig

mpmath.mp.dps = 40


def mp_bs_call(s0, k, r, sigma, t):
    s0, k, r, sigma, t = map(mpmath.mpf, (s0, k, r, sigma, t))
    vol = sigma * mpmath.sqrt(t)
    d1 = (mpmath.log(s0 / k) + (r + sigma ** 2 / 2) * t) / vol
    return float(s0 * mpmath.ncdf(d1) - k * mpmath.exp(-r * t) * mpmath.ncdf(d1 - vol))


def test_norm_cdf_basics():
    assert norm_cdf(0.0) == 0.5
    assert norm_pdf(0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)


@given(st.floats(-8.0, 8.0))
def test_norm_cdf_symmetry(x):
    assert abs(norm_cdf(-x) - (1.0 - norm_cdf(x))) <= 1e-14


def test_norm_cdf_against_high_precision():
    xs = np.linspace(-8.0, 8.0, 4001)
    worst = max(abs(norm_cdf(float(x)) - float(mpmath.ncdf(mpmath.mpf(float(x))))) for x in xs)
    assert worst < 1e-10


def test_bs_examples():
    ref = mp_bs_call(100, 100, 0.05, 0.4, 1.0)
    assert bs_call(100.0, 100.0, 0.05, 0.4, 1.0) == pytest.approx(ref, abs=1e-10)
    assert round(ref, 4) == 18.0230  # 18.02295...
    assert bs_call(100.0, 100.0, 0.05, 0.0, 1.0) == pytest.approx(100 - 100 * math.exp(-0.05), abs=1e-12)
    assert bs_call(100.0, 100.0, 0.05, 0.0, 1.0) == pytest.approx(4.8771, abs=1e-4)
    assert bs_call(100.0, 0.0, 0.05, 0.4, 1.0) - 100.0 == 0.0


def test_bs_d_terms():
    # d1 = 0.325, d2 = -0.075 for the base parameters
    d1 = (math.log(1.0) + (0.05 + 0.08) * 1.0) / 0.4
    assert d1 == pytest.approx(0.325) and d1 - 0.4 == pytest.approx(-0.075)


@given(st.floats(50, 150), st.floats(50, 150), st.floats(0.0, 0.1), st.floats(0.05, 0.8),
       st.floats(0.1, 3.0))
def test_bs_against_mpmath(s0, k, r, sigma, t):
    assert bs_call(s0, k, r, sigma, t) == pytest.approx(mp_bs_call(s0, k, r, sigma, t), abs=1e-9)


def test_bs_validation():
    with pytest.raises(ValueError):
        bs_call(0.0, 100.0, 0.05, 0.4, 1.0)
    with pytest.raises(ValueError):
        bs_call(100.0, 100.0, 0.05, -0.1, 1.0)


def test_prob_above():
    m = MarketConfig(100.0, 0.4, 100.0)
    assert prob_above(m, 100.0) == pytest.approx(float(mpmath.ncdf(-0.075)), abs=1e-12)
    assert round(prob_above(m, 100.0), 4) == 0.4701
    assert prob_above(m, 0.0) == 1.0


def test_lognormal_cdf_edges():
    out = lognormal_cdf([-1.0, 0.0, 1e9], 0.0, 1.0)
    assert out[0] == 0.0 and out[1] == 0.0 and out[2] == pytest.approx(1.0)


def test_bins_model_invariants():
    m = MarketConfig(100.0, 0.4, 100.0)
    b = bins_model(m, 5)
    assert len(b.midpoints) == 32
    assert abs(math.fsum(b.masses) - 1.0) <= 1e-10
    assert np.all(np.diff(b.midpoints) > 0)
    assert b.midpoints[0] == pytest.approx(300 / 64)
    with pytest.raises(ValueError):
        BinsModel(np.array([1.0, 2.0]), np.array([0.5, 0.4]), 1)
    with pytest.raises(ValueError):
        bins_model(m, 5, (10.0, 10.0))
    with pytest.raises(ValueError):
        bins_model(m, 0)


def test_bins_collapse_at_small_sigma():
    m = MarketConfig(100.0, 1e-9, 90.0)
    b = bins_model(m, 8)
    forward = 100.0 * math.exp(0.05)
    k = int(np.argmax(b.masses))
    assert b.masses[k] == pytest.approx(1.0)
    width = 300.0 / 256
    assert abs(b.midpoints[k] - forward) <= width / 2
    assert bins_price(m, 8) == pytest.approx(math.exp(-0.05) * (b.midpoints[k] - 90.0), rel=1e-12)


def test_bins_k5_strikes_close_to_bs():
    for strike in (80, 90, 100, 110, 120):
        m = MarketConfig(100.0, 0.4, float(strike))
        err = abs(bins_price(m, 5) - bs_call(100.0, strike, 0.05, 0.4, 1.0))
        assert err < 0.2


def test_bins_k16_converges():
    # wide bounds remove the truncation bias of the default [0, 3*S0] grid
    m = MarketConfig(100.0, 0.4, 100.0)
    ref = bs_call(100.0, 100.0, 0.05, 0.4, 1.0)
    assert abs(bins_price(m, 16, (0.0, 1000.0)) - ref) < 1e-3
    errors = [abs(bins_price(m, k, (0.0, 1000.0)) - ref) for k in (4, 6, 8, 12, 16)]
    assert all(a > b for a, b in zip(errors, errors[1:]))
