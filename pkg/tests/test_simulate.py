import math

import numpy as np
import pytest
from oracles import bs_slope
from scipy.stats import norm

from eigenrecovery.catalog import black_scholes
from eigenrecovery.model import MarketModel
from eigenrecovery.odesolve import solve
from eigenrecovery.simulate import exceedance_trend, martingale_mc_check, path_normals, simulate

R, DELTA, SIGMA = 0.05, 0.02, 0.2


@pytest.fixture(scope="module")
def bs():
    return black_scholes(R, DELTA, SIGMA).model


@pytest.fixture(scope="module")
def sol(bs):
    return solve(bs, 0.0)


def test_normals_depend_only_on_seed_and_path():
    a = path_normals(3, 17, 50)
    assert np.array_equal(a, path_normals(3, 17, 50))
    assert not np.array_equal(a, path_normals(3, 18, 50))
    assert not np.array_equal(a, path_normals(4, 17, 50))


def test_results_independent_of_blocking(bs, sol):
    kw = dict(horizon=0.5, n_paths=300, n_steps=100, seed=11, solution=sol)
    base = simulate(bs, "Q", block=4096, workers=1, **kw)
    other = simulate(bs, "Q", block=37, workers=3, **kw)
    assert np.array_equal(base.terminal, other.terminal)
    assert np.array_equal(base.weights, other.weights)
    assert base.to_dict() == other.to_dict()


def test_seed_changes_paths(bs):
    a = simulate(bs, "Q", 0.5, 200, 100, seed=1)
    b = simulate(bs, "Q", 0.5, 200, 100, seed=2)
    assert not np.array_equal(a.terminal, b.terminal)


def test_zero_horizon_is_trivial(bs, sol):
    res = simulate(bs, "Q", 0.0, 50, 100, solution=sol, thresholds=(0.5, 1.0))
    assert np.all(res.terminal == bs.xi)
    assert res.martingale_estimate == (1.0, 0.0)
    assert res.exceedance == {0.5: 1.0, 1.0: 0.0}
    assert martingale_mc_check(bs, 0.0, horizon=0.0).passed


@pytest.mark.parametrize(
    "kw",
    [
        dict(measure="R"),
        dict(measure="P"),
        dict(n_steps=99),
        dict(n_paths=1),
        dict(horizon=-1.0),
    ],
)
def test_validation(bs, kw):
    args = dict(measure="Q", horizon=1.0, n_paths=10, n_steps=100)
    args.update(kw)
    with pytest.raises(ValueError):
        simulate(bs, **args)


def test_risk_neutral_lognormal_moments(bs):
    # under Q, log X_T ~ N((0.07 - sigma^2/2) T, sigma^2 T)
    res = simulate(bs, "Q", 1.0, 4000, 200, seed=5)
    logs = np.log(res.terminal)
    mu, sd = 0.07 - 0.5 * SIGMA**2, SIGMA
    assert logs.mean() == pytest.approx(mu, abs=4 * sd / math.sqrt(4000))
    assert logs.std(ddof=1) == pytest.approx(sd, rel=0.05)
    assert res.terminal_quantiles[0.5] == pytest.approx(math.exp(mu), rel=0.02)


def test_recovered_measure_lognormal_drift(bs, sol):
    p = bs_slope(R, DELTA, SIGMA, 0.0)
    res = simulate(bs, "P", 1.0, 4000, 200, seed=6, solution=sol, thresholds=(1.0,))
    mu = (R - DELTA) + SIGMA**2 * p - 0.5 * SIGMA**2
    assert np.log(res.terminal).mean() == pytest.approx(mu, abs=4 * SIGMA / math.sqrt(4000))
    assert res.exceedance[1.0] == pytest.approx(norm.sf(-mu / SIGMA), abs=0.03)
    assert res.clipped_paths == 0


def test_martingale_check_passes_for_black_scholes(bs):
    chk = martingale_mc_check(bs, 0.0, n_paths=5000, n_steps=200, seed=1)
    assert chk.passed and chk.stderr > 0


def test_martingale_check_fails_for_explosive_model():
    m = MarketModel(b=0.0, sigma=1.0, r="1+0.5*(exp(x)+exp(2*x))", v=0.0, xi=0.0, domain=(-math.inf, math.inf))
    chk = martingale_mc_check(m, 1.0, n_paths=5000, n_steps=200, seed=1)
    assert not chk.passed
    assert chk.estimate < 0.6


def test_exceedance_trend_shape(bs, sol):
    trend = exceedance_trend(bs, sol, horizons=(1.0, 2.0), n_paths=500)
    assert len(trend) == 2 and all(0.0 <= f <= 1.0 for f in trend)


def test_serialisation_keys(bs, sol):
    d = simulate(bs, "Q", 0.5, 100, 100, solution=sol, thresholds=(1.2,)).to_dict()
    assert set(d["martingale_estimate"]) == {"mean", "stderr"}
    assert "1.2" in d["exceedance"]
