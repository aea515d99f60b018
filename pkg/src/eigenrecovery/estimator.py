"""scikit-learn style wrapper around :func:`recover_agent`.

``fit`` ignores its data: the market model fully determines the agent, so
there is nothing to estimate from samples.  ``transform`` maps a column of
states to the recovered kernel quantities.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.interpolate import CubicHermiteSpline
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .catalog import by_name
from .model import MarketModel
from .recover import admissible_set, recover_agent

__all__ = ["RepresentativeAgentTransformer"]

OUTPUT_COLUMNS = ("phi", "marginal_utility", "utility", "objective_drift")


class RepresentativeAgentTransformer(BaseEstimator, TransformerMixin):
    """Evaluate ``phi``, ``U'``, ``U`` and the recovered drift at given states.

    Parameters
    ----------
    model : MarketModel or str
        A market, or a catalog name combined with ``params``.
    params : dict, optional
        Catalog parameters when ``model`` is a name.
    lam : float, optional
        Eigenvalue.  Defaults to the upper end of the admissible set.
    force : bool
        Skip the admissibility check.
    n_grid : int
        Points of the utility table used for interpolation.
    """

    def __init__(self, model="black_scholes", params=None, lam=None, force=False, n_grid=801):
        self.model = model
        self.params = params
        self.lam = lam
        self.force = force
        self.n_grid = n_grid

    def _market(self) -> MarketModel:
        if isinstance(self.model, MarketModel):
            return self.model
        params = self.params or {"r": 0.05, "delta": 0.02, "sigma": 0.2}
        return by_name(self.model, **params).model

    def fit(self, X=None, y=None):
        market = self._market()
        admissible = None
        lam = self.lam
        if not self.force or lam is None:
            admissible = admissible_set(market, grid=())
            if lam is None:
                if admissible.empty or not math.isfinite(admissible.lambda_hi):
                    raise ValueError(f"no admissible eigenvalue to default to ({admissible.reason or 'undecided'})")
                lam = admissible.lambda_hi
                if admissible.hi_included is not True:
                    lam -= 1e-6 * (1.0 + abs(lam))
        agent = recover_agent(market, lam, force=self.force, admissible=admissible, n=self.n_grid)
        self.market_ = market
        self.agent_ = agent
        self.admissible_ = admissible
        self.beta_ = agent.beta
        self.slope_ = agent.slope
        # U' is known exactly, so Hermite interpolation on the chart is fourth order
        chart = market.chart
        u = chart.to_u(agent.x)
        self._utility = CubicHermiteSpline(u, agent.utility, agent.marginal_utility * chart.derivatives(u)[0], extrapolate=False)
        self.n_features_in_ = 1
        return self

    def transform(self, X):
        check_is_fitted(self, "agent_")
        X = check_array(X, ensure_2d=True, dtype=float)
        if X.shape[1] != 1:
            raise ValueError(f"expected a single column of states, got {X.shape[1]}")
        x = X[:, 0]
        lo, hi = self.market_.domain
        if np.any((x <= lo) | (x >= hi)):
            raise ValueError("states must lie inside the model domain")
        sol = self.agent_.solution
        log_phi = np.asarray(sol.log_h(x), dtype=float)
        with np.errstate(over="ignore"):
            phi = np.exp(log_phi)
            mu = np.exp(-log_phi)
        utility = self._utility(self.market_.chart.to_u(x))
        drift = self.agent_.objective_drift(x)
        return np.column_stack([phi, mu, utility, drift])

    def get_feature_names_out(self, input_features=None):
        return np.asarray(OUTPUT_COLUMNS, dtype=object)
