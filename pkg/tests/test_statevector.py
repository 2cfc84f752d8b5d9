import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mcqp import chaosrng
from mcqp.emulator import EmulationConfig, simulate
from mcqp.fixedpoint import RegisterLayout, codecs_for_layout, decode, encode
from mcqp.market import HestonParams, MarketConfig
from mcqp.statevector import (ConfigurationWarning, ContractViolation, ancilla_one_probability,
                              apply_M, apply_P, apply_R, apply_R_inv, apply_T, apply_V, dump_state,
                              evolve_paths, init_state, option_price, rotate_ancilla, run_pipeline)

M2 = MarketConfig(s0=100.0, sigma=0.4, strike=100.0, steps=2)


def layout(n=3, bits=4, steps=2, **kw):
    return RegisterLayout(index_bits=n, variable_bits=bits, price_bits=bits, payoff_bits=bits,
                          steps=steps, **kw)


def test_init_n1():
    s = init_state(layout(n=1), M2)
    assert s.support_size == 2
    for amp in s.amplitudes.values():
        assert amp == pytest.approx(1 / math.sqrt(2))
    assert s.norm_squared() == pytest.approx(1.0, abs=1e-12)
    assert ancilla_one_probability(s) == 0.0


def test_init_price_code():
    s = init_state(layout(n=3, bits=5), M2)
    pos = s.position("price")
    assert {k[pos] for k in s.amplitudes} == {10}
    assert s.support_size == 8


def test_init_warns_on_clamp():
    codecs = codecs_for_layout(M2, layout(), price_upper=50.0)
    with pytest.warns(ConfigurationWarning):
        init_state(layout(), M2, codecs)


def test_R_writes_sampler_codes_and_inverts():
    lay = layout(n=1)
    s = init_state(lay, M2)
    r = apply_R(s, 0)
    var = r.circuit.codecs.variable
    pv, pi = r.position("variable"), r.position("index")
    got = {k[pi]: k[pv] for k in r.amplitudes}
    assert got == {i: encode(chaosrng.delta_w(i, 0, M2.dt), var) for i in (0, 1)}
    assert sorted(r.amplitudes.values(), key=abs) == sorted(s.amplitudes.values(), key=abs)
    assert apply_R_inv(r, 0).amplitudes == s.amplitudes


def test_R_contract_violations():
    s = apply_R(init_state(layout(n=1), M2), 0)
    with pytest.raises(ContractViolation):
        apply_R(s, 1)
    with pytest.raises(ContractViolation):
        apply_R_inv(s, 1)


def test_T_deterministic_cases():
    m = MarketConfig(s0=100.0, sigma=0.0, strike=100.0, mu=0.0, steps=3)
    lay = layout(n=2, bits=6, steps=3)
    s = init_state(lay, m)
    out = evolve_paths(s, range(3))
    assert out.amplitudes == s.amplitudes  # mu = sigma = 0 leaves every code unchanged

    m = MarketConfig(s0=100.0, sigma=0.0, strike=0.0, mu=0.5, total_time=1.0, steps=1)
    lay = layout(n=2, bits=6, steps=1)
    out = apply_T(apply_R(init_state(lay, m), 0))
    c = out.circuit.codecs.price
    expected = encode(decode(encode(100.0, c), c) * 1.5, c)
    assert {k[out.position("price")] for k in out.amplitudes} == {expected}


def heston_market(v0, theta, xi=0.0, kappa=2.0, steps=4, rho=0.0):
    return MarketConfig(s0=100.0, sigma=0.4, strike=100.0, steps=steps,
                        heston=HestonParams(kappa=kappa, theta=theta, xi=xi, rho=rho, v0=v0))


def heston_layout(n=2, bits=5, steps=4, vol_bits=10):
    return layout(n=n, bits=bits, steps=steps, vol_bits=vol_bits, vol_variable_bits=bits)


def test_V_fixed_point_and_decay():
    m = heston_market(0.16, 0.16)
    s = evolve_paths(init_state(heston_layout(), m), range(4))
    pv = s.position("variance")
    assert {decode(k[pv], s.circuit.codecs.variance) for k in s.amplitudes} == {0.16}

    # xi = 0, v0 != theta: closed-form Euler recursion with per-step rounding
    m = heston_market(0.09, 0.25, kappa=3.0)
    lay = heston_layout(vol_bits=14)
    s = init_state(lay, m)
    codec = s.circuit.codecs.variance
    nu = decode(encode(0.09, codec), codec)
    for t in range(4):
        s = apply_R_inv(apply_V(apply_R(s, t)), t)
        nu = codec.quantize(nu + 3.0 * (0.25 - nu) * m.dt)
        got = {decode(k[s.position("variance")], codec) for k in s.amplitudes}
        assert got == {nu}
    assert abs(nu - 0.25) == pytest.approx(0.16 * (1 - 3.0 * m.dt) ** 4, abs=2 * codec.spacing)


def test_V_full_truncation():
    m = heston_market(0.01, 0.01, xi=50.0, kappa=0.0, steps=1)
    s = apply_V(apply_R(init_state(heston_layout(n=3, steps=1), m), 0))
    pv, pw = s.position("variance"), s.position("vol_variable")
    w_codec = s.circuit.codecs.vol_variable
    negatives = [k for k in s.amplitudes if decode(k[pw], w_codec) < -0.1 / 50.0 * 2]
    assert negatives and all(k[pv] == 0 for k in negatives)


def test_V_rejected_for_gbm():
    with pytest.raises(ContractViolation):
        apply_V(init_state(layout(), M2))


def test_P_examples():
    m = MarketConfig(s0=120.0, sigma=0.0, mu=0.0, strike=100.0, steps=1)
    lay = RegisterLayout(1, 4, 12, 12, steps=1)
    codecs = codecs_for_layout(m, lay, price_upper=4095.0 / 10)
    s = apply_P(init_state(lay, m, codecs))
    pp = s.position("payoff")
    (payoff,) = {decode(k[pp], codecs.payoff) for k in s.amplitudes}
    assert payoff == pytest.approx(20.0, abs=codecs.payoff.spacing / 2)

    m90 = m.replace(s0=90.0)
    s = apply_P(init_state(lay, m90, codecs_for_layout(m90, lay)))
    assert {k[s.position("payoff")] for k in s.amplitudes} == {0}

    m0 = m.replace(strike=0.0)
    c0 = codecs_for_layout(m0, lay)
    s = apply_P(init_state(lay, m0, c0))
    for k in s.amplitudes:
        assert decode(k[s.position("payoff")], c0.payoff) == decode(k[s.position("price")], c0.price)


def test_M_examples():
    s = apply_P(init_state(layout(n=1), M2))
    assert apply_M(s).amplitudes == s.amplitudes  # S0 = K: zero payoff everywhere

    rot = rotate_ancilla(s, lambda regs: (0.25, 0.75)[regs["index"]])
    assert ancilla_one_probability(rot) == pytest.approx(0.5, abs=1e-15)
    assert rot.norm_squared() == pytest.approx(1.0, abs=1e-12)

    full = rotate_ancilla(s, lambda regs: 1.0)
    assert ancilla_one_probability(full) == pytest.approx(1.0, abs=1e-12)
    with pytest.raises(ContractViolation):
        rotate_ancilla(s, lambda regs: 1.5)
    with pytest.raises(ContractViolation):
        apply_M(s, payoff_max=0.0)


def test_pipeline_one_deterministic_step():
    m = MarketConfig(s0=100.0, sigma=0.0, strike=90.0, mu=0.05, steps=1)
    lay = layout(n=1, bits=6, steps=1)
    s = run_pipeline(lay, m)
    c = s.circuit.codecs
    price = c.price.quantize(c.price.quantize(100.0) * (1 + 0.05))
    expected = c.payoff.quantize(max(price - 90.0, 0.0)) / c.payoff_max
    assert ancilla_one_probability(s) == pytest.approx(expected, abs=1e-15)


def test_central_cross_module_example():
    lay = layout(n=3, bits=4, steps=2)
    s = run_pipeline(lay, M2)
    codecs = s.circuit.codecs
    emu = simulate(EmulationConfig(M2, 8, codecs, rng="chaos", keep_paths=True))
    pp, pi = s.position("payoff"), s.position("index")
    branch = {k[pi]: decode(k[pp], codecs.payoff) for k in s.amplitudes}
    assert [branch[i] for i in range(8)] == emu.payoffs.tolist()
    assert ancilla_one_probability(s) * codecs.payoff_max == pytest.approx(emu.mean_payoff, rel=1e-12)
    assert option_price(s) == pytest.approx(emu.price, rel=1e-12)


@given(st.integers(1, 4), st.integers(1, 5), st.integers(2, 6), st.floats(0.0, 0.8),
       st.floats(60.0, 140.0))
@settings(max_examples=40, deadline=None)
def test_invariants(n, steps, bits, sigma, strike):
    m = MarketConfig(s0=100.0, sigma=sigma, strike=strike, steps=steps)
    lay = layout(n=n, bits=bits, steps=steps)
    s = init_state(lay, m)
    for t in range(steps):
        for op in (lambda x: apply_R(x, t), apply_T, lambda x: apply_R_inv(x, t)):
            s = op(s)
            assert abs(s.norm_squared() - 1.0) <= 1e-12
            assert s.support_size == 1 << n
    s = apply_M(apply_P(s))
    assert abs(s.norm_squared() - 1.0) <= 1e-12
    assert s.support_size <= 2 << n
    p1 = ancilla_one_probability(s)
    assert 0.0 <= p1 <= 1.0
    p0 = math.fsum(abs(a) ** 2 for k, a in s.amplitudes.items() if k[s.position("ancilla")] == 0)
    assert abs(p1 - (1 - p0)) <= 1e-12


def test_branch_independence():
    # a different sampler changes draws for every branch; restricting the index
    # register leaves the surviving branches untouched
    big = run_pipeline(layout(n=3), M2)
    small = run_pipeline(layout(n=2), M2)
    pi, pp = big.position("index"), big.position("price")
    big_prices = {k[pi]: k[pp] for k in big.amplitudes}
    small_prices = {k[pi]: k[pp] for k in small.amplitudes}
    assert all(big_prices[i] == small_prices[i] for i in range(4))


def test_heston_degeneracy_matches_gbm():
    gbm = MarketConfig(s0=100.0, sigma=0.4, strike=100.0, steps=3)
    hes = gbm.replace(heston=HestonParams(kappa=1.5, theta=0.16, xi=0.0, rho=-0.3, v0=0.16))
    lay_g = layout(n=3, bits=5, steps=3)
    lay_h = layout(n=3, bits=5, steps=3, vol_bits=5, vol_variable_bits=5)
    pg, ph = run_pipeline(lay_g, gbm), run_pipeline(lay_h, hes)
    assert ancilla_one_probability(pg) == ancilla_one_probability(ph)


def test_pipeline_rejects_mismatched_layout():
    hes = M2.replace(heston=HestonParams(1.0, 0.16, 0.1, 0.0, 0.16))
    with pytest.raises(ValueError):
        run_pipeline(layout(), hes)


def test_dump_state_canonical():
    s = run_pipeline(layout(n=2, bits=3), M2)
    text = dump_state(s)
    lines = text.strip().split("\n")
    assert lines[0].startswith("index_bits,index_code")
    assert len(lines) == 1 + s.support_size
    shuffled = s.with_amplitudes(dict(reversed(list(s.amplitudes.items()))))
    assert dump_state(shuffled) == text
