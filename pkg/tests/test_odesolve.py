import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import bs_lambda_bar, bs_slope, shooting_upper_slope

from eigenrecovery.catalog import black_scholes, exp_cir, log_dividend
from eigenrecovery.model import MarketModel
from eigenrecovery.odesolve import (
    HypothesisViolation,
    ZeroCrossing,
    critical_lambda,
    integrate,
    residual,
    slope_bounds,
    solve,
)

BS = (0.05, 0.02, 0.2)


@pytest.fixture(scope="module")
def bs():
    return black_scholes(*BS).model


def test_flat_solution_at_rate(bs):
    sol = solve(bs, 0.05, 0.0)
    x = bs.sample_grid(101)
    np.testing.assert_allclose(sol.h(x), 1.0, atol=1e-9)


def test_second_solution_at_rate_matches_gamma_quadrature():
    # gamma(s) = s^{-1/4}; h1(x) = int_0^x gamma / int_0^xi gamma = x^{3/4}
    m = black_scholes(0.05, 0.045, 0.2).model
    sol = solve(m, 0.05, 0.75)
    x = m.sample_grid(61, depth=10)
    np.testing.assert_allclose(sol.h(x), x**0.75, rtol=1e-7)


def test_slope_above_upper_hits_zero_on_left(bs):
    m0 = bs_slope(*BS, 0.0)
    out = integrate(bs, 0.0, m0 + 0.05, "left")
    assert isinstance(out, ZeroCrossing)
    assert out.x0 < bs.xi
    # closed-form combination A x^p1 + B x^p2 vanishes where x^{p1-p2} = -B/A
    c = 0.5 - 0.03 / 0.04
    p1, p2 = c + math.sqrt(c * c + 2 * 0.05 / 0.04), c - math.sqrt(c * c + 2 * 0.05 / 0.04)
    z = m0 + 0.05
    a, b = (z - p2) / (p1 - p2), (p1 - z) / (p1 - p2)
    assert out.x0 == pytest.approx((-b / a) ** (1 / (p1 - p2)), rel=1e-8)


def test_upper_slope_at_zero(bs):
    sl = slope_bounds(bs, 0.0)
    assert sl.M_lambda == pytest.approx(-0.25 + math.sqrt(2.5625), abs=1e-8)
    assert sl.nonempty and not sl.indeterminate


def test_above_critical_is_empty(bs):
    assert not slope_bounds(bs, 0.052).nonempty


def test_far_below_rate_floor_signs(bs):
    sl = slope_bounds(bs, 0.05 - 10)
    assert sl.nonempty
    assert sl.M_lambda > 0 > sl.m_lambda


@pytest.mark.parametrize("lam,depth", [(-0.3, 10.0), (0.0, 10.0), (0.03, 15.0), (0.049, 40.0)])
def test_upper_slope_matches_bisection_shooting(bs, lam, depth):
    # the oracle's own truncation bias decays like exp(-(p+ - p-) depth); deeper near the critical value
    assert slope_bounds(bs, lam).M_lambda == pytest.approx(shooting_upper_slope(bs, lam, depth), abs=1e-6)


def test_upper_slope_bisection_on_log_dividend():
    # the quadratic confinement in log coordinates makes a shallow oracle window sufficient
    m = log_dividend(0.05, 0.1, 0.2).model
    assert slope_bounds(m, 0.0).M_lambda == pytest.approx(shooting_upper_slope(m, 0.0, depth=5.0), abs=1e-6)


def test_nonlinear_custom_model_against_shooting():
    m = MarketModel(b="(0.03+0.04)*x + 0.01*x/(1+x)", sigma="0.2*x", r=0.05, v=0.2, xi=1.0)
    assert slope_bounds(m, 0.0).M_lambda == pytest.approx(shooting_upper_slope(m, 0.0), abs=1e-6)


@pytest.mark.parametrize(
    "params,expected",
    [((0.05, 0.02, 0.2), 0.05125), ((0.02, 0.015, 0.3), 0.0288889), ((0.03, 0.03, 0.25), bs_lambda_bar(0.03, 0.03, 0.25))],
)
def test_critical_lambda_black_scholes(params, expected):
    crit = critical_lambda(black_scholes(*params).model)
    assert crit.value == pytest.approx(expected, abs=1e-4)
    assert crit.value >= crit.rate_floor


def test_critical_lambda_exp_cir_is_rate():
    crit = critical_lambda(exp_cir(0.05, 0.02, 0.2).aux_models["y"])
    assert crit.value == pytest.approx(0.05, abs=1e-4)


def test_negative_rate_refused():
    m = MarketModel(b="0.03*x", sigma="0.2*x", r="0.01*log(x)", v=0.2, xi=1.0)
    with pytest.raises(HypothesisViolation):
        critical_lambda(m)


def test_residual_of_closed_form(bs):
    cf = black_scholes(*BS)
    assert cf.residual(0.02) <= 1e-6


def test_residual_of_flat_solution_is_rounding(bs):
    assert residual(bs, solve(bs, 0.05, 0.0)) <= 1e-13


def test_residual_detects_corruption(bs):
    cf = black_scholes(*BS)
    good = cf.solution(0.02)

    class Corrupted:
        lam = good.lam

        @staticmethod
        def log_h(x):
            return good.log_h(x) + np.log1p(0.01 * np.sin(np.log(x)))

        @staticmethod
        def dlog_h(x):
            return good.dlog_h(x) + 0.01 * np.cos(np.log(x)) / x / (1 + 0.01 * np.sin(np.log(x)))

    # a 1% wiggle leaves a scaled residual near 5e-4, far above the 1e-6 acceptance level
    assert residual(bs, Corrupted()) > 1e-4


def test_numeric_solution_residual(bs):
    assert residual(bs, solve(bs, 0.02)) <= 1e-6


def test_normalised_at_xi(bs):
    sol = solve(bs, 0.01)
    assert sol.h(bs.xi) == pytest.approx(1.0, abs=1e-14)
    grid = sol.grid()
    assert np.all(grid["h"] > 0)


@pytest.mark.parametrize("c", [0.1, 10.0])
def test_state_rescaling_invariance(c):
    # Y = cX: same market in new units, so h_Y(y) = h_X(y/c) and slopes scale by 1/c
    base = MarketModel(b="0.07*x+0.01*x/(1+x)", sigma="0.2*x", r=0.05, v=0.2, xi=1.0)
    scaled = MarketModel(b=f"0.07*x+0.01*x/(1+x/{c!r})", sigma="0.2*x", r=0.05, v=0.2, xi=c)
    for lam in (-0.1, 0.02):
        assert slope_bounds(scaled, lam).M_lambda == pytest.approx(slope_bounds(base, lam).M_lambda / c, rel=1e-7)


def test_tolerance_halving_stable(bs):
    coarse = slope_bounds(bs, 0.01, rtol=1e-8).M_lambda
    fine = slope_bounds(bs, 0.01, rtol=1e-11).M_lambda
    assert coarse == pytest.approx(fine, abs=1e-6)


def test_slice_members_stay_positive(bs):
    lam = 0.02
    sl = slope_bounds(bs, lam)
    rng = np.random.default_rng(3)
    for z in rng.uniform(sl.m_lambda, sl.M_lambda, 5):
        for side in ("left", "right"):
            assert not isinstance(integrate(bs, lam, float(z), side), ZeroCrossing)


def test_upper_slope_nonincreasing_in_lambda(bs):
    lams = np.linspace(-0.5, 0.0512, 15)
    ms = [slope_bounds(bs, float(l), check_sensitivity=False).M_lambda for l in lams]
    assert np.all(np.diff(ms) <= 1e-9)


@pytest.mark.parametrize("cf", [black_scholes(*BS), log_dividend(0.05, 0.1, 0.2)], ids=["bs", "logdiv"])
def test_no_positive_interior_maximum_below_rate(cf):
    m = cf.model
    x = m.sample_grid(401, depth=15)
    for lam in (-0.2, 0.0, 0.04):
        for slope in ("M", "m"):
            d = np.sign(solve(m, lam, slope).dlog_h(x))
            # h' may turn from negative to positive (a minimum) but never back
            assert not np.any((d[:-1] > 0) & (d[1:] < 0))


def test_increasing_above_rate_when_right_gamma_diverges(bs):
    # BS with 2(r-delta) < sigma^2 has int^inf gamma = inf
    m = black_scholes(0.02, 0.015, 0.3).model
    lam_bar = bs_lambda_bar(0.02, 0.015, 0.3)
    x = m.sample_grid(201, depth=15)
    for lam in np.linspace(0.021, lam_bar - 1e-4, 4):
        assert np.all(solve(m, float(lam)).dlog_h(x) > 0)


@settings(max_examples=15, deadline=None)
@given(st.floats(0.01, 0.08), st.floats(0.0, 0.05), st.floats(0.1, 0.5), st.floats(-0.5, 0.0))
def test_upper_slope_matches_closed_form(r, delta, sigma, lam):
    m = black_scholes(r, delta, sigma).model
    expected = bs_slope(r, delta, sigma, lam)
    assert slope_bounds(m, lam, check_sensitivity=False).M_lambda == pytest.approx(expected, rel=1e-6)
