import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eigenrecovery.catalog import black_scholes, exp_cir
from eigenrecovery.exprdsl import parse
from eigenrecovery.model import MarketModel, ModelError, apply_monotone_map, derive, to_log_coordinates
from eigenrecovery.odesolve import residual, solve


def bs_model(r=0.05, delta=0.02, sigma=0.2):
    return black_scholes(r, delta, sigma).model


def test_k_is_drift_minus_vol_product():
    m = bs_model()
    d = derive(m)
    x = np.geomspace(0.01, 100, 9)
    np.testing.assert_allclose(d.k(x), 0.03 * x, rtol=1e-14)


def test_gamma_is_one_at_xi():
    d = derive(bs_model())
    assert d.gamma_log(1.0) == 0.0
    assert d.gamma(1.0) == 1.0


@pytest.mark.parametrize("r,delta,sigma", [(0.05, 0.02, 0.2), (0.02, 0.015, 0.3), (0.03, 0.03, 0.25)])
def test_gamma_matches_power_law(r, delta, sigma):
    # gamma(s) = s^{-2(r-delta)/sigma^2} for geometric Brownian motion
    d = derive(bs_model(r, delta, sigma))
    s = np.geomspace(math.exp(-3), math.exp(3), 25)
    np.testing.assert_allclose(d.gamma_log(s), -2 * (r - delta) / sigma**2 * np.log(s), atol=1e-8)


def test_gamma_positive_far_out():
    d = derive(bs_model(0.05, 0.0, 0.1))
    s = np.geomspace(1e-8, 1e8, 11)
    assert np.all(d.gamma(s) > 0)


def test_sigma_must_be_positive():
    with pytest.raises(ModelError):
        MarketModel(b="x", sigma="x-1", r=0.05, v=0.2, xi=2.0)


def test_xi_inside_domain():
    with pytest.raises(ModelError):
        MarketModel(b="x", sigma="x", r=0.05, v=0.2, xi=0.0)


def test_string_coefficients_are_parsed():
    m = MarketModel(b="0.03*x", sigma="0.2*x", r=0.05, v=0.2, xi=1.0)
    assert m.b == parse("0.03*x")


def test_log_coordinates_of_exp_cir_give_cir():
    cf = exp_cir(0.05, 0.02, 0.2)
    # composed coefficients evaluate e^y, so keep y below the overflow point
    y_model = to_log_coordinates(cf.model.with_truncation(6.0))
    y = np.linspace(0.05, 10, 31)
    b, s, r, v = y_model.coefficients(y)
    theta = 0.03
    np.testing.assert_allclose(b - s * v, theta + 0.5 * 0.04 * y - 0.04 * y, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(s, 0.2 * np.sqrt(y), rtol=1e-13)
    yb, ys, _, yv = cf.aux_models["y"].coefficients(y)
    np.testing.assert_allclose(b, yb, rtol=1e-12)
    np.testing.assert_allclose(s, ys, rtol=1e-12)


def test_log_coordinates_of_black_scholes():
    r, delta, sigma = 0.05, 0.02, 0.2
    y_model = to_log_coordinates(bs_model(r, delta, sigma))
    y = np.linspace(-5, 5, 11)
    b, s, rr, v = y_model.coefficients(y)
    np.testing.assert_allclose(b, r - delta + 0.5 * sigma**2, rtol=1e-13)
    np.testing.assert_allclose(s, sigma, rtol=1e-13)
    assert y_model.xi == 0.0
    assert y_model.domain == (-math.inf, math.inf)


def test_unit_volatility_composition():
    m = MarketModel(b=0.0, sigma=1.0, r=0.0, v=0.0, xi=1.0)
    y_model = to_log_coordinates(m)
    y = np.linspace(-2, 2, 5)
    np.testing.assert_allclose(y_model.coefficients(y)[1], np.exp(-y), rtol=1e-14)


def test_identity_map_leaves_model_unchanged():
    m = bs_model()
    sol = solve(m, 0.03)
    mapped, H = apply_monotone_map(m, sol, parse("x"), parse("x"))
    x = m.sample_grid(101)
    for a, b in zip(m.coefficients(x), mapped.coefficients(x)):
        np.testing.assert_allclose(a, b, rtol=1e-12)
    np.testing.assert_allclose(H.dlog_h(x), sol.dlog_h(x), rtol=1e-12)


def test_log_map_agrees_with_log_coordinates():
    m = bs_model()
    sol = solve(m, 0.03)
    mapped, _ = apply_monotone_map(m, sol, parse("log(x)"), parse("exp(x)"))
    direct = to_log_coordinates(m)
    y = np.linspace(-15, 15, 61)
    for a, b in zip(direct.coefficients(y), mapped.coefficients(y)):
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-12)


def test_square_map_keeps_eigenpair():
    m = bs_model()
    lam = 0.03
    sol = solve(m, lam)
    mapped, H = apply_monotone_map(m, sol, parse("x^2"), parse("sqrt(x)"))
    assert H.lam == lam
    assert residual(mapped, H) <= 1e-6


def test_nonmonotone_map_rejected():
    m = bs_model()
    sol = solve(m, 0.03)
    with pytest.raises(ModelError):
        apply_monotone_map(m, sol, parse("(x-1)^2"), parse("sqrt(x)+1"))


def test_bad_inverse_rejected():
    m = bs_model()
    sol = solve(m, 0.03)
    with pytest.raises(ModelError):
        apply_monotone_map(m, sol, parse("x^2"), parse("x"))


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.1), st.floats(0.0, 0.1), st.floats(0.05, 0.6))
def test_log_roundtrip_recovers_coefficients(r, delta, sigma):
    m = bs_model(r, delta, sigma)
    y_model = to_log_coordinates(m)
    x = np.geomspace(1e-3, 1e3, 21)
    b, s, rr, v = y_model.coefficients(np.log(x))
    # X = exp(Y): drift (b_Y + s_Y^2/2) x, volatility s_Y x
    b0, s0, r0, v0 = m.coefficients(x)
    np.testing.assert_allclose((b + 0.5 * s * s) * x, b0, rtol=1e-10)
    np.testing.assert_allclose(s * x, s0, rtol=1e-10)
    np.testing.assert_allclose(rr, r0, rtol=1e-12)
