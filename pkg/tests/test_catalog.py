import math

import mpmath
import numpy as np
import pytest
from oracles import bs_lambda_bar, bs_slope

from eigenrecovery.catalog import CATALOG, black_scholes, by_name, exp_cir, exp_cir_slope_formula, log_dividend
from eigenrecovery.odesolve import residual, slope_bounds, solve


def all_models():
    return [black_scholes(0.05, 0.02, 0.2), black_scholes(0.02, 0.015, 0.3), exp_cir(0.05, 0.02, 0.2), log_dividend(0.05, 0.1, 0.2)]


@pytest.mark.parametrize("cf", all_models(), ids=lambda c: c.name)
def test_closed_form_residuals(cf):
    for lam in (cf.lambda_bar - 0.01, cf.lambda_bar - 0.1, cf.lambda_bar - 0.5):
        assert cf.residual(lam) <= 1e-6


@pytest.mark.parametrize("cf", all_models(), ids=lambda c: c.name)
def test_normalised_at_xi(cf):
    sol = cf.solution(cf.lambda_bar - 0.02)
    assert sol.log_h(cf.model.xi) == pytest.approx(0.0, abs=1e-14)


def test_black_scholes_closed_form_against_formula():
    cf = black_scholes(0.05, 0.02, 0.2)
    assert cf.lambda_bar == pytest.approx(0.05125, abs=1e-15)
    assert cf.m_slope(0.0) == pytest.approx(-0.25 + math.sqrt(2.5625), rel=1e-14)
    x = np.geomspace(0.1, 10, 5)
    np.testing.assert_allclose(cf.h(0.0, x), x ** bs_slope(0.05, 0.02, 0.2, 0.0), rtol=1e-13)


def test_no_formula_above_critical():
    cf = black_scholes(0.05, 0.02, 0.2)
    assert cf.solution(0.06) is None
    assert math.isnan(cf.m_slope(0.06))


def test_black_scholes_expected_sets():
    hi = black_scholes(0.05, 0.02, 0.2).expected
    assert hi.hi == 0.05 and not hi.hi_included
    assert hi.contains(0.0) and not hi.contains(0.05)
    lo = black_scholes(0.02, 0.015, 0.3).expected
    assert lo.hi == pytest.approx(bs_lambda_bar(0.02, 0.015, 0.3)) and lo.hi_included
    assert lo.contains(lo.hi)


def test_exp_cir_expected_set_empty():
    e = exp_cir(0.05, 0.02, 0.2).expected
    assert e.empty and e.reason == "usual set empty: entrance left boundary"
    assert not e.contains(0.0)


def test_exp_cir_parameter_checks():
    with pytest.raises(ValueError):
        exp_cir(0.05, 0.04, 0.3)  # 2 theta < sigma^2
    with pytest.raises(ValueError):
        exp_cir(0.05, 0.02, 0.2, xi=1.0)


@pytest.mark.parametrize("lam", [0.04, 0.0])
def test_exp_cir_slope_formula_against_mpmath(lam):
    r, delta, sigma, xi = 0.05, 0.02, 0.2, math.e
    a, b = 2 * (r - lam) / sigma**2, 2 * (r - delta) / sigma**2
    y = math.log(xi)
    ref = (a / b) * mpmath.hyp1f1(a + 1, b + 1, y) / mpmath.hyp1f1(a, b, y) / xi
    assert exp_cir_slope_formula(r, delta, sigma, xi, lam) == pytest.approx(float(ref), rel=1e-12)


@pytest.mark.parametrize("lam", [0.04, 0.0])
def test_exp_cir_numeric_slope_matches_formula(lam):
    cf = exp_cir(0.05, 0.02, 0.2)
    numeric = slope_bounds(cf.model, lam).M_lambda
    assert numeric == pytest.approx(exp_cir_slope_formula(0.05, 0.02, 0.2, math.e, lam), rel=1e-6)


def test_exp_cir_log_derivative_asymptote():
    # M(a,b,y) ~ e^y y^{a-b} / Gamma(a): g'/g -> 1 + (a-b)/y
    r, delta, sigma, lam = 0.05, 0.02, 0.2, 0.0
    a, b = 2 * (r - lam) / sigma**2, 2 * (r - delta) / sigma**2
    cf = exp_cir(r, delta, sigma)
    y = 50.0
    gy = cf.solution(lam).dlog_h(math.exp(y)) * math.exp(y)
    assert gy == pytest.approx(1 + (a - b) / y, abs=2e-3)


def test_log_dividend_log_derivative_matches_finite_difference():
    cf = log_dividend(0.05, 0.1, 0.2)
    sol = cf.solution(0.0)
    x = np.geomspace(0.05, 20, 9)
    eps = 1e-6
    fd = (sol.log_h(x * (1 + eps)) - sol.log_h(x * (1 - eps))) / (2 * eps * x)
    np.testing.assert_allclose(sol.dlog_h(x), fd, rtol=1e-6)


def test_log_dividend_against_mpmath_parabolic_form():
    # below kappa the solution is sqrt(pi) U(alpha, 1/2, q t^2)
    r, b, sigma, lam = 0.05, 0.1, 0.2, 0.0
    kappa = r / b - sigma**2 / (2 * b)
    q, alpha = b / sigma**2, (r - lam) / (2 * b)
    cf = log_dividend(r, b, sigma)
    sol = cf.solution(lam)
    ys = np.array([-3.0, -1.0, 0.0])
    ref = [float(mpmath.log(mpmath.hyperu(alpha, 0.5, q * (y - kappa) ** 2))) for y in ys]
    ref0 = float(mpmath.log(mpmath.hyperu(alpha, 0.5, q * kappa**2)))
    np.testing.assert_allclose(sol.log_h(np.exp(ys)), np.array(ref) - ref0, atol=1e-10)


def test_log_dividend_right_asymptote():
    # log-derivative in y grows like 2 b (y - kappa) / sigma^2
    r, b, sigma = 0.05, 0.1, 0.2
    kappa = r / b - sigma**2 / (2 * b)
    sol = log_dividend(r, b, sigma).solution(0.0)
    y = 12.0
    gy = sol.dlog_h(math.exp(y)) * math.exp(y)
    assert gy / (2 * b * (y - kappa) / sigma**2) == pytest.approx(1.0, rel=0.02)


def test_log_dividend_flat_at_rate():
    cf = log_dividend(0.05, 0.1, 0.2)
    x = np.geomspace(0.01, 100, 7)
    np.testing.assert_allclose(cf.h(0.05, x), 1.0, atol=1e-12)


@pytest.mark.parametrize("lam", [-0.1, 0.0, 0.03])
def test_log_dividend_numeric_slope_matches(lam):
    cf = log_dividend(0.05, 0.1, 0.2)
    assert slope_bounds(cf.model, lam).M_lambda == pytest.approx(cf.m_slope(lam), rel=1e-6, abs=1e-9)


def test_catalog_lookup():
    assert set(CATALOG) == {"black_scholes", "exp_cir", "log_dividend"}
    assert by_name("black_scholes", r=0.05, delta=0.02, sigma=0.2).name == "black_scholes"
    with pytest.raises(ValueError):
        by_name("heston")


def test_numeric_and_closed_form_agree_pointwise():
    cf = black_scholes(0.02, 0.015, 0.3)
    sol = solve(cf.model, 0.0)
    x = cf.model.sample_grid(41, depth=15)
    np.testing.assert_allclose(sol.log_h(x), cf.solution(0.0).log_h(x), atol=1e-7)
    assert residual(cf.model, sol) <= 1e-6


@pytest.mark.parametrize("lam", [0.05, 0.0, -0.2])
def test_log_dividend_continuous_across_branch_point(lam):
    r, b, sigma = 0.05, 0.1, 0.2
    kappa = r / b - sigma**2 / (2 * b)
    sol = log_dividend(r, b, sigma).solution(lam)
    eps = 1e-7
    lo, hi = sol.log_h(math.exp(kappa - eps)), sol.log_h(math.exp(kappa + eps))
    assert hi == pytest.approx(lo, abs=1e-5)
