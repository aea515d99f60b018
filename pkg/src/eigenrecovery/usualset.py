"""Usual conditions on the candidate function ``h`` at slope ``M_lambda``.

``h`` is usual when it is positive, strictly increasing, tends to 0 at the
left boundary and to infinity at the right one.  Exact boundary-based rules
are tried first; a numeric trend test is the fallback.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .boundary import BoundaryReport, Classification, gamma_integral_verdicts
from .model import DerivedCoefficients, MarketModel, derive, evaluate_coefficient
from .odesolve import OdeSolveError, critical_lambda, solve

__all__ = [
    "UsualStatus",
    "Check",
    "TheoremPath",
    "UsualVerdict",
    "LambdaOne",
    "usual_check",
    "lambda_one",
    "rate_is_constant",
]

CONDITIONS = ("positive", "increasing", "left_limit_zero", "right_limit_infinite")
# two lambdas closer than this (relative to 1+|lambda|) are treated as equal
LAMBDA_TOL = 1e-5


class UsualStatus(str, Enum):
    USUAL = "usual"
    NOT_USUAL = "not_usual"
    INDETERMINATE = "indeterminate"

    def __str__(self):
        return self.value


class Check(str, Enum):
    PASS = "pass"
    FAIL = "fail"
    UNKNOWN = "unknown"

    def __str__(self):
        return self.value


class TheoremPath(str, Enum):
    """Which exact rule decided the verdict."""

    ENTRANCE_LEFT = "entrance-left"
    BELOW_RATE_FLOOR = "below-rate-floor"
    ABOVE_CRITICAL = "above-critical"
    FLAT_CRITICAL_INCLUDED = "flat-critical-included"
    FLAT_CRITICAL_EXCLUDED = "flat-critical-excluded"
    RIGHT_GAMMA_FINITE = "right-gamma-finite"
    BELOW_CRITICAL = "below-critical"
    NATURAL_RIGHT_AT_CRITICAL = "natural-right-at-critical"
    UNRESOLVED_AT_CRITICAL = "unresolved-at-critical"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class UsualVerdict:
    status: UsualStatus
    conditions: dict
    rationale: str  # "theorem" or "numeric"
    path: TheoremPath | None = None
    notes: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.status == UsualStatus.USUAL and any(self.conditions[c] != Check.PASS for c in CONDITIONS):
            raise ValueError("a usual verdict needs every condition to pass")

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "rationale": self.rationale,
            "path": None if self.path is None else self.path.value,
            "conditions": {k: v.value for k, v in self.conditions.items()},
            "notes": self.notes,
        }


def _all(check: Check) -> dict:
    return {c: check for c in CONDITIONS}


def rate_is_constant(model: MarketModel) -> bool:
    r = evaluate_coefficient(model.r, model.sample_grid())
    r_xi = float(evaluate_coefficient(model.r, model.xi))
    return bool(np.ptp(r) < 1e-12 * (1.0 + abs(r_xi)))


def _rate_nonneg_bounded_left(model: MarketModel) -> bool:
    x = model.sample_grid()
    r = evaluate_coefficient(model.r, x[x <= model.xi])
    r_xi = float(evaluate_coefficient(model.r, model.xi))
    return bool(np.all(np.isfinite(r)) and np.all(r >= 0) and np.max(np.abs(r)) <= 1e6 * (1.0 + abs(r_xi)))


class _Context:
    """Lazily computed quantities shared by the decision rules."""

    def __init__(self, model, report, lambda_bar=None, derived=None):
        self.model = model
        self.report = report
        self._lambda_bar = lambda_bar
        self._derived = derived
        self._gamma = None
        self.constant_rate = rate_is_constant(model)
        self.r_floor = model.rate_floor()

    @property
    def lambda_bar(self) -> float:
        if self._lambda_bar is None:
            self._lambda_bar = float(critical_lambda(self.model).value)
        return self._lambda_bar

    @property
    def derived(self) -> DerivedCoefficients:
        if self._derived is None:
            self._derived = derive(self.model)
        return self._derived

    @property
    def gamma(self):
        if self._gamma is None:
            self._gamma = gamma_integral_verdicts(self.model, self.derived)
        return self._gamma

    def same(self, a: float, b: float) -> bool:
        return abs(a - b) <= LAMBDA_TOL * (1.0 + abs(b))


def _theorem_rule(ctx: _Context, lam: float):
    """``(status, path)`` from the exact rules, or None when none applies."""
    report = ctx.report
    if report.left == Classification.ENTRANCE:
        return UsualStatus.NOT_USUAL, TheoremPath.ENTRANCE_LEFT
    if report.left != Classification.NATURAL:
        return None
    if lam < ctx.r_floor and not ctx.same(lam, ctx.r_floor) and _rate_nonneg_bounded_left(ctx.model):
        return UsualStatus.USUAL, TheoremPath.BELOW_RATE_FLOOR
    if not ctx.constant_rate:
        return None
    r = ctx.r_floor
    lam_bar = ctx.lambda_bar
    if lam > lam_bar and not ctx.same(lam, lam_bar):
        return UsualStatus.NOT_USUAL, TheoremPath.ABOVE_CRITICAL
    left_g, right_g = ctx.gamma
    if ctx.same(lam_bar, r):
        if right_g.divergent and left_g.convergent:
            return UsualStatus.USUAL, TheoremPath.FLAT_CRITICAL_INCLUDED
        if right_g.kind == "indeterminate" or left_g.kind == "indeterminate":
            return None
        return UsualStatus.NOT_USUAL, TheoremPath.FLAT_CRITICAL_EXCLUDED
    if right_g.convergent:
        return UsualStatus.NOT_USUAL, TheoremPath.RIGHT_GAMMA_FINITE
    if not right_g.divergent:
        return None
    if not ctx.same(lam, lam_bar):
        return UsualStatus.USUAL, TheoremPath.BELOW_CRITICAL
    if report.right == Classification.NATURAL:
        return UsualStatus.USUAL, TheoremPath.NATURAL_RIGHT_AT_CRITICAL
    return UsualStatus.INDETERMINATE, TheoremPath.UNRESOLVED_AT_CRITICAL


def _trend(values, direction: int, threshold: float) -> Check:
    v = np.asarray(values, dtype=float)
    if not np.all(np.isfinite(v)):
        return Check.UNKNOWN
    steps = np.diff(v) * direction
    if np.all(steps > 0) and direction * (v[-1] - threshold) > 0:
        return Check.PASS
    return Check.UNKNOWN


def numeric_conditions(model: MarketModel, solution, depths=(1.0, 2.0, 3.0)) -> tuple[dict, dict]:
    """Per-condition checks on the grid plus edge trends over deepening windows.

    Limits can only fail as UNKNOWN: a missing trend is not a counterexample.
    """
    x = model.sample_grid()
    log_h = np.asarray(solution.log_h(x), dtype=float)
    d1, _ = model.chart.derivatives(model.chart.to_u(x))
    w = np.asarray(solution.dlog_h(x), dtype=float) * d1
    cond = {
        "positive": Check.PASS if np.all(np.isfinite(log_h)) else Check.FAIL,
        "increasing": Check.PASS if np.all(w > 1e-10) else Check.FAIL,
    }
    lam = float(solution.lam)
    left_vals, right_vals = [], []
    note = ""
    for f in depths:
        mt = model.with_truncation(model.truncation * f)
        try:
            sol = solve(mt, lam, "M")
        except OdeSolveError as exc:
            note = f"re-solve at depth {mt.truncation} failed: {exc}"
            break
        lo, hi = mt.x_window()
        left_vals.append(float(sol.log_h(lo)))
        right_vals.append(float(sol.log_h(hi)))
    if len(left_vals) == len(depths):
        cond["left_limit_zero"] = _trend(left_vals, -1, math.log(1e-6))
        cond["right_limit_infinite"] = _trend(right_vals, 1, math.log(1e6))
    else:
        cond["left_limit_zero"] = cond["right_limit_infinite"] = Check.UNKNOWN
    notes = {"edge_log_h_left": left_vals, "edge_log_h_right": right_vals}
    if note:
        notes["failure"] = note
    return cond, notes


def _numeric_status(cond: dict) -> UsualStatus:
    if any(v == Check.FAIL for v in cond.values()):
        return UsualStatus.NOT_USUAL
    if all(v == Check.PASS for v in cond.values()):
        return UsualStatus.USUAL
    return UsualStatus.INDETERMINATE


def usual_check(
    model: MarketModel,
    solution,
    boundary_report: BoundaryReport | None,
    lambda_bar: float | None = None,
    derived: DerivedCoefficients | None = None,
    force_numeric: bool = False,
) -> UsualVerdict:
    """Decide whether ``(lambda, M_lambda)`` satisfies the usual conditions."""
    if boundary_report is None:
        raise ValueError("usual_check needs a boundary report")
    lam = float(solution.lam)
    if not force_numeric:
        ctx = _Context(model, boundary_report, lambda_bar, derived)
        rule = _theorem_rule(ctx, lam)
        if rule is not None:
            status, path = rule
            if status == UsualStatus.USUAL:
                cond = _all(Check.PASS)
            else:
                cond = _all(Check.UNKNOWN)
                cond["positive"] = Check.PASS
            return UsualVerdict(status, cond, "theorem", path)
    cond, notes = numeric_conditions(model, solution)
    return UsualVerdict(_numeric_status(cond), cond, "numeric", None, notes)


@dataclass(frozen=True)
class LambdaOne:
    """Supremum of the usual set.

    ``included`` is True/False, or None when membership of the endpoint is
    undecided.  ``empty`` marks a usual set with no members.
    """

    value: float
    included: bool | None
    empty: bool = False
    path: str = ""
    indeterminate: bool = False

    def to_dict(self) -> dict:
        return {
            "lambda_one": None if self.empty else self.value,
            "included": self.included,
            "empty": self.empty,
            "path": self.path,
            "indeterminate": self.indeterminate,
        }


def lambda_one(
    model: MarketModel,
    boundary_report: BoundaryReport,
    lambda_bar: float | None = None,
    derived: DerivedCoefficients | None = None,
    tol: float = 1e-6,
) -> LambdaOne:
    ctx = _Context(model, boundary_report, lambda_bar, derived)
    if boundary_report.left == Classification.ENTRANCE:
        return LambdaOne(math.nan, None, empty=True, path=TheoremPath.ENTRANCE_LEFT.value)
    if boundary_report.left != Classification.NATURAL:
        return LambdaOne(math.nan, None, path="left boundary not natural", indeterminate=True)
    lam_bar = ctx.lambda_bar
    if ctx.constant_rate:
        r = ctx.r_floor
        left_g, right_g = ctx.gamma
        if ctx.same(lam_bar, r):
            if right_g.divergent and left_g.convergent:
                return LambdaOne(r, True, path=TheoremPath.FLAT_CRITICAL_INCLUDED.value)
            if left_g.kind == "indeterminate" or right_g.kind == "indeterminate":
                return LambdaOne(r, None, path="gamma integral undecided", indeterminate=True)
            return LambdaOne(r, False, path=TheoremPath.FLAT_CRITICAL_EXCLUDED.value)
        if right_g.convergent:
            return LambdaOne(r, False, path=TheoremPath.RIGHT_GAMMA_FINITE.value)
        if right_g.divergent:
            if boundary_report.right == Classification.NATURAL:
                return LambdaOne(lam_bar, True, path=TheoremPath.NATURAL_RIGHT_AT_CRITICAL.value)
            return LambdaOne(lam_bar, None, path=TheoremPath.UNRESOLVED_AT_CRITICAL.value)
        return LambdaOne(math.nan, None, path="gamma integral undecided", indeterminate=True)

    # usual statuses form a down-set in lambda, so bisect on [r_floor, lambda_bar]
    def status(lam):
        try:
            sol = solve(model, lam, "M")
        except OdeSolveError:
            return UsualStatus.INDETERMINATE
        return usual_check(model, sol, boundary_report, lam_bar, ctx.derived).status

    top = status(lam_bar)
    if top == UsualStatus.USUAL:
        return LambdaOne(lam_bar, True, path="bisection")
    if top == UsualStatus.INDETERMINATE:
        return LambdaOne(lam_bar, None, path="bisection", indeterminate=True)
    good, bad = ctx.r_floor, lam_bar
    # below the rate floor the set is known to be usual when r >= 0 is bounded on the left
    if not _rate_nonneg_bounded_left(model) and status(good) != UsualStatus.USUAL:
        return LambdaOne(good, None, path="bisection: lower end not usual", indeterminate=True)
    while bad - good > tol:
        mid = 0.5 * (good + bad)
        st = status(mid)
        if st == UsualStatus.INDETERMINATE:
            return LambdaOne(mid, None, path="bisection", indeterminate=True)
        if st == UsualStatus.USUAL:
            good = mid
        else:
            bad = mid
    value = 0.5 * (good + bad)
    end = status(value)
    included = None if end == UsualStatus.INDETERMINATE else end == UsualStatus.USUAL
    return LambdaOne(value, included, path="bisection")
