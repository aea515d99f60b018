import numpy as np
import pytest
from oracles import bs_slope
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from eigenrecovery.catalog import black_scholes
from eigenrecovery.estimator import RepresentativeAgentTransformer


@pytest.fixture(scope="module")
def fitted():
    return RepresentativeAgentTransformer(lam=0.0, n_grid=201).fit()


def test_params_roundtrip():
    est = RepresentativeAgentTransformer(lam=0.01, force=True)
    assert est.get_params()["lam"] == 0.01
    cl = clone(est)
    assert cl.get_params() == est.get_params()
    assert cl.set_params(lam=0.02).lam == 0.02


def test_transform_matches_power_utility(fitted):
    x = np.array([[0.5], [1.0], [2.0]])
    out = fitted.transform(x)
    p = bs_slope(0.05, 0.02, 0.2, 0.0)
    np.testing.assert_allclose(out[:, 0], x[:, 0] ** p, rtol=1e-6)
    np.testing.assert_allclose(out[:, 1], x[:, 0] ** (-p), rtol=1e-6)
    np.testing.assert_allclose(out[:, 2], (x[:, 0] ** (1 - p) - 1) / (1 - p), rtol=1e-5, atol=1e-9)
    assert fitted.beta_ == 0.0
    assert list(fitted.get_feature_names_out()) == ["phi", "marginal_utility", "utility", "objective_drift"]


def test_default_lambda_just_below_open_upper_end():
    est = RepresentativeAgentTransformer(n_grid=101).fit()
    assert est.beta_ < 0.05 and est.beta_ == pytest.approx(0.05, abs=1e-5)


def test_accepts_model_instances():
    est = RepresentativeAgentTransformer(model=black_scholes(0.05, 0.02, 0.2).model, lam=0.0, force=True, n_grid=101).fit()
    assert est.transform([[1.0]])[0, 0] == pytest.approx(1.0)


def test_input_validation(fitted):
    with pytest.raises(NotFittedError):
        RepresentativeAgentTransformer().transform([[1.0]])
    with pytest.raises(ValueError):
        fitted.transform([[1.0, 2.0]])
    with pytest.raises(ValueError):
        fitted.transform([[-1.0]])
    with pytest.raises(ValueError):
        fitted.transform([[np.nan]])


def test_empty_admissible_set_cannot_default():
    with pytest.raises(ValueError):
        RepresentativeAgentTransformer(model="exp_cir", params={"r": 0.05, "delta": 0.02, "sigma": 0.2}).fit()


def test_in_pipeline():
    pipe = make_pipeline(RepresentativeAgentTransformer(lam=0.0, n_grid=101), StandardScaler())
    out = pipe.fit_transform(np.array([[0.5], [1.0], [2.0], [4.0]]))
    assert out.shape == (4, 4)
    np.testing.assert_allclose(out.mean(axis=0), 0.0, atol=1e-12)
