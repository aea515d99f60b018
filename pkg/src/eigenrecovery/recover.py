"""Admissible eigenvalues and the representative agent they determine."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .boundary import BoundaryReport, classify_model
from .exprdsl import Expr, parse, to_source
from .martcrit import lambda_zero
from .model import CumulativeIntegral, MarketModel, derive, evaluate_coefficient
from .integrals import DepthSchedule
from .odesolve import RTOL, OdeSolveError, critical_lambda, slope_bounds, solve
from .usualset import lambda_one

__all__ = [
    "AdmissibleSet",
    "RecoveredAgent",
    "NotAdmissibleError",
    "admissible_set",
    "recover_agent",
    "composite_index_model",
]


class NotAdmissibleError(ValueError):
    pass


@dataclass(frozen=True)
class AdmissibleSet:
    """``{lambda : lambda_lo <= lambda <= lambda_hi}`` with inclusion flags.

    Inclusion flags are True, False or None (undecided).  ``samples`` holds
    rows ``(lambda, M_lambda, indeterminate)``.
    """

    lambda_lo: float
    lo_included: bool | None
    lambda_hi: float
    hi_included: bool | None
    samples: tuple = ()
    empty: bool = False
    reason: str = ""
    diagnostics: dict = field(default_factory=dict, compare=False)

    def contains(self, lam: float) -> bool | None:
        if self.empty:
            return False
        for edge, included, inside in (
            (self.lambda_lo, self.lo_included, lam > self.lambda_lo),
            (self.lambda_hi, self.hi_included, lam < self.lambda_hi),
        ):
            if lam == edge:
                return included
            if not inside:
                return False
        return True

    def to_dict(self) -> dict:
        return {
            "empty": self.empty,
            "reason": self.reason,
            "lambda_lo": self.lambda_lo,
            "lo_included": self.lo_included,
            "lambda_hi": self.lambda_hi,
            "hi_included": self.hi_included,
            "samples": [{"lambda": lam, "m_slope": m, "indeterminate": ind} for lam, m, ind in self.samples],
            "diagnostics": self.diagnostics,
        }


def _sample_lambdas(lo, lo_inc, hi, hi_inc, grid, span):
    if not np.isscalar(grid):
        lams = np.asarray(grid, dtype=float)
        return lams[(lams >= lo) & (lams <= hi)]
    n = int(grid)
    start = lo if math.isfinite(lo) else hi - span
    pts = np.linspace(start, hi, n + (hi_inc is not True) + (math.isfinite(lo) and lo_inc is not True))
    if hi_inc is not True:
        pts = pts[:-1]
    if math.isfinite(lo) and lo_inc is not True:
        pts = pts[1:]
    return pts


def admissible_set(
    model: MarketModel,
    grid=9,
    boundary_report: BoundaryReport | None = None,
    span: float | None = None,
    lambda_tol: float = 1e-6,
    rtol: float = RTOL,
    slope_tol: float = 1e-10,
    schedule: DepthSchedule = DepthSchedule(),
) -> AdmissibleSet:
    """Intersect the martingale interval ``[lambda_0, lambda_bar]`` with the usual one ``(-inf, lambda_1]``.

    ``grid`` is a sample count or an explicit array of eigenvalues.  With an
    unbounded lower end the samples start ``span`` (default ``0.1(1+|r_floor|)``)
    below the upper end.
    """
    report = boundary_report or classify_model(model, schedule=schedule)
    derived = derive(model)
    crit = critical_lambda(model, tol=lambda_tol, rtol=rtol)
    lam_bar = float(crit.value)
    diag = {
        "lambda_bar": lam_bar,
        "rate_floor": crit.rate_floor,
        "boundaries": {"left": report.left.value, "right": report.right.value},
    }
    l1 = lambda_one(model, report, lam_bar, derived, tol=lambda_tol)
    diag["lambda_one"] = l1.to_dict()
    if l1.empty:
        reason = f"usual set empty: {report.left.value} left boundary"
        return AdmissibleSet(math.nan, None, math.nan, None, (), True, reason, diag)
    if l1.indeterminate or not math.isfinite(l1.value):
        return AdmissibleSet(math.nan, None, math.nan, None, (), False, "usual set undecided", diag)

    l0 = lambda_zero(model, lam_bar, derived=derived, schedule=schedule)
    diag["lambda_zero"] = l0.to_dict()
    if l0.indeterminate:
        return AdmissibleSet(math.nan, None, l1.value, l1.included, (), False, "martingale set undecided", diag)
    lo, lo_inc = (l0.value, False) if l0.floor_hit else (l0.value, None)
    hi, hi_inc = l1.value, l1.included
    if lo > hi or (lo == hi and not (lo_inc and hi_inc)):
        return AdmissibleSet(lo, lo_inc, hi, hi_inc, (), True, "martingale and usual sets do not overlap", diag)

    if span is None:
        span = 0.1 * (1.0 + abs(crit.rate_floor))
    rows = []
    for lam in _sample_lambdas(lo, lo_inc, hi, hi_inc, grid, span):
        try:
            sl = slope_bounds(model, float(lam), rtol=rtol, slope_tol=slope_tol)
            rows.append((float(lam), float(sl.M_lambda), bool(sl.indeterminate)))
        except OdeSolveError:
            rows.append((float(lam), math.nan, True))
    return AdmissibleSet(lo, lo_inc, hi, hi_inc, tuple(rows), False, "", diag)


@dataclass(frozen=True)
class RecoveredAgent:
    """Representative agent on the solver window.

    ``phi`` is normalised to ``phi(xi) = 1``, the utility to ``U(xi) = 0`` and
    ``U'(xi) = 1``.
    """

    beta: float
    slope: float
    x: np.ndarray = field(repr=False)
    phi: np.ndarray = field(repr=False)
    marginal_utility: np.ndarray = field(repr=False)
    utility: np.ndarray = field(repr=False)
    drift: np.ndarray = field(repr=False)
    model: MarketModel = field(repr=False, compare=False, default=None)
    solution: object = field(repr=False, compare=False, default=None)

    @property
    def lam(self) -> float:
        return self.beta

    def objective_drift(self, x):
        """State drift under the recovered measure, ``k + sigma^2 phi'/phi``."""
        b, s, _, v = self.model.coefficients(x)
        return b - s * v + s * s * np.asarray(self.solution.dlog_h(x), dtype=float)

    def table(self) -> dict:
        return {
            "x": self.x,
            "phi": self.phi,
            "marginal_utility": self.marginal_utility,
            "utility": self.utility,
            "objective_drift": self.drift,
        }

    def summary(self) -> dict:
        xi = self.model.xi
        return {
            "beta": self.beta,
            "lambda": self.beta,
            "m_slope": self.slope,
            "xi": xi,
            "normalizations": {"phi_xi": 1.0, "utility_xi": 0.0, "marginal_utility_xi": 1.0},
            "objective_drift_xi": float(self.objective_drift(np.array([xi]))[0]),
            "x_min": float(self.x[0]),
            "x_max": float(self.x[-1]),
        }


def recover_agent(
    model: MarketModel,
    lam: float,
    force: bool = False,
    admissible: AdmissibleSet | None = None,
    n: int = 401,
) -> RecoveredAgent:
    """Build ``(beta, phi, U)`` from the upper-slope solution at ``lam``."""
    lam = float(lam)
    if not force:
        admissible = admissible or admissible_set(model, grid=())
        inside = admissible.contains(lam)
        if inside is False:
            raise NotAdmissibleError(f"lambda={lam} is outside the admissible set ({admissible.reason or 'range'})")
        if inside is None:
            raise NotAdmissibleError(f"membership of lambda={lam} is undecided; pass force=True to proceed")
    sol = solve(model, lam, "M")
    chart = model.chart
    x = model.sample_grid(n)

    def inv_phi_chart(u):
        d1, _ = chart.derivatives(u)
        with np.errstate(over="ignore"):
            return np.exp(np.log(d1) - np.asarray(sol.log_h(chart.to_x(u)), dtype=float))

    cumulative = CumulativeIntegral(inv_phi_chart, model.u_xi, tol=1e-13)
    utility = cumulative(chart.to_u(x))
    log_phi = np.asarray(sol.log_h(x), dtype=float)
    with np.errstate(over="ignore"):
        phi = np.exp(log_phi)
        mu = np.exp(-log_phi)
    b, s, _, v = model.coefficients(x)
    drift = b - s * v + s * s * np.asarray(sol.dlog_h(x), dtype=float)
    return RecoveredAgent(lam, float(sol.slope), x, phi, mu, utility, drift, model, sol)


def _as_source(f) -> str:
    if isinstance(f, Expr):
        return to_source(f)
    if isinstance(f, str):
        return to_source(parse(f))
    return repr(float(f))


def composite_index_model(delta_fn, r_fn, sigma_fn, xi: float, domain=(0.0, math.inf), name: str = "composite") -> MarketModel:
    """Market for a dividend-paying index ``S`` with dividend rate ``delta(S)``.

    Drift ``(r - delta + sigma^2) s``, volatility ``sigma s`` and numeraire
    volatility ``sigma``, so that ``k = (r - delta) s``.
    """
    d, r, s = (_as_source(f) for f in (delta_fn, r_fn, sigma_fn))
    model = MarketModel(
        b=parse(f"(({r})-({d})+({s})^2)*x"),
        sigma=parse(f"({s})*x"),
        r=parse(r) if not isinstance(r_fn, (int, float)) else float(r_fn),
        v=parse(s) if not isinstance(sigma_fn, (int, float)) else float(sigma_fn),
        xi=xi,
        domain=domain,
        name=name,
    )
    grid = model.sample_grid()
    dv = evaluate_coefficient(parse(d), grid)
    if np.any(np.diff(dv) < -1e-12 * (1.0 + np.abs(dv[1:]))):
        raise ValueError("dividend rate must be nondecreasing in the index level")
    payout = dv * grid
    if np.any(np.diff(payout) <= 0):
        warnings.warn("dividend payout delta(s)*s is not strictly increasing on the sample grid", stacklevel=2)
    return model
