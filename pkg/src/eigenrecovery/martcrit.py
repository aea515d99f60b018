"""Martingale property of ``e^{lambda t} h(X_t) / G_t``.

The process is a true martingale exactly when the diffusion induced by
``(lambda, h)``, with drift ``k + sigma^2 h'/h``, does not explode.  By
Feller's test that means, at each boundary,

    int dx  gamma(x)/h(x)^2  int_xi^x dy  h(y)^2 / (sigma(y)^2 gamma(y))  = infinity.

Both integrands are built from ``log h`` so extreme magnitudes are harmless.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .integrals import DepthSchedule, IntegralVerdict, double_integral_verdict
from .model import DerivedCoefficients, MarketModel, derive, evaluate_coefficient
from .odesolve import OdeSolveError, solve

__all__ = [
    "MartingaleStatus",
    "MartingaleVerdict",
    "LambdaZero",
    "martingale_check",
    "lambda_zero",
]


class MartingaleStatus(str, Enum):
    MARTINGALE = "martingale"
    STRICT_LOCAL = "strict_local"
    INDETERMINATE = "indeterminate"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class MartingaleVerdict:
    status: MartingaleStatus
    left_integral: IntegralVerdict
    right_integral: IntegralVerdict

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "left_integral": self.left_integral.to_dict(),
            "right_integral": self.right_integral.to_dict(),
        }


def _status(left: IntegralVerdict, right: IntegralVerdict) -> MartingaleStatus:
    if left.convergent or right.convergent:
        return MartingaleStatus.STRICT_LOCAL
    if left.divergent and right.divergent:
        return MartingaleStatus.MARTINGALE
    return MartingaleStatus.INDETERMINATE


def _verdicts(model, solution, derived, schedule, extend):
    chart = model.chart

    def pieces(u):
        x = chart.to_x(u)
        d1, _ = chart.derivatives(u)
        log_h = np.asarray(solution.log_h(x), dtype=float)
        sigma = evaluate_coefficient(model.sigma, x)
        return derived.gamma_log_u(u), 2.0 * log_h, 2.0 * np.log(sigma), np.log(d1)

    def outer(u):
        gl, lh2, _, ld = pieces(u)
        return gl - lh2 + ld

    def inner(u):
        gl, lh2, ls2, ld = pieces(u)
        return lh2 - ls2 - gl + ld

    u0 = model.u_xi
    left = double_integral_verdict(outer, inner, u0, "left", schedule, extend=extend)
    right = double_integral_verdict(outer, inner, u0, "right", schedule, extend=extend)
    return left, right


def martingale_check(
    model: MarketModel,
    solution,
    derived: DerivedCoefficients | None = None,
    schedule: DepthSchedule = DepthSchedule(),
    deepen: bool = True,
) -> MartingaleVerdict:
    """Apply the non-explosion criterion to a positive solution ``h``.

    The integrals only run over the solution's window.  If a side stays
    undecided and ``deepen`` is set, the upper-slope solution is recomputed on
    a window ``schedule.extension`` times wider and the integrals may go that
    much deeper.
    """
    needed = schedule.n_max * schedule.delta
    if model.truncation + 1e-9 < needed:
        raise ValueError(
            f"working window half-width {model.truncation} is shallower than the depth schedule ({needed})"
        )
    derived = derived or derive(model)
    left, right = _verdicts(model, solution, derived, schedule, extend=False)
    status = _status(left, right)
    if status == MartingaleStatus.INDETERMINATE and deepen and schedule.extension > 1:
        wide = model.with_truncation(model.truncation * schedule.extension)
        try:
            deep_solution = solve(wide, solution.lam, "M") if _is_upper(model, solution) else None
        except OdeSolveError:
            deep_solution = None
        if deep_solution is not None:
            dl, dr = _verdicts(wide, deep_solution, derived, schedule, extend=True)
            left = left if left.kind != "indeterminate" else dl
            right = right if right.kind != "indeterminate" else dr
            status = _status(left, right)
    return MartingaleVerdict(status, left, right)


def _is_upper(model, solution) -> bool:
    """Only the upper-slope solution can be rebuilt on a wider window."""
    slope = getattr(solution, "slope", None)
    if slope is None or not hasattr(solution, "lam"):
        return False
    try:
        ref = solve(model, solution.lam, "M").slope
    except OdeSolveError:
        return False
    return abs(ref - slope) <= 1e-8 * (1.0 + abs(ref))


@dataclass(frozen=True)
class LambdaZero:
    """Infimum of the martingale set along the upper slope ``M_lambda``.

    ``value`` is ``-inf`` when every probe down to the floor was a martingale
    (``floor_hit``), and ``+inf`` when even the top probe is not.
    """

    value: float
    floor_hit: bool
    bracket: tuple
    probes: tuple = field(default=(), compare=False)
    indeterminate: bool = False

    def to_dict(self) -> dict:
        return {
            "lambda_zero": self.value,
            "floor_hit": self.floor_hit,
            "bracket": list(self.bracket),
            "indeterminate": self.indeterminate,
            "probes": [[lam, status] for lam, status in self.probes],
        }


def lambda_zero(
    model: MarketModel,
    lambda_bar: float,
    floor: float | None = None,
    tol: float = 1e-4,
    derived: DerivedCoefficients | None = None,
    schedule: DepthSchedule = DepthSchedule(),
) -> LambdaZero:
    """Locate the switch from strict local martingale (below) to martingale (above)."""
    derived = derived or derive(model)
    r_floor = model.rate_floor()
    if floor is None:
        floor = r_floor - 50.0 * (1.0 + abs(r_floor))
    probes: list = []

    def status(lam):
        try:
            sol = solve(model, lam, "M")
        except OdeSolveError:
            probes.append((lam, "no-solution"))
            return None
        st = martingale_check(model, sol, derived, schedule).status
        probes.append((lam, st.value))
        return st

    top = float(lambda_bar)
    st = status(top)
    if st is None:
        top -= 1e-6 * (1.0 + abs(top))
        st = status(top)
    if st is None or st == MartingaleStatus.INDETERMINATE:
        return LambdaZero(math.nan, False, (top, top), tuple(probes), indeterminate=True)
    if st == MartingaleStatus.STRICT_LOCAL:
        return LambdaZero(math.inf, False, (top, math.inf), tuple(probes))

    good = top
    step = 1.0 + abs(r_floor)
    bad = None
    while good > floor:
        lam = max(good - step, floor)
        st = status(lam)
        if st is None or st == MartingaleStatus.INDETERMINATE:
            return LambdaZero(math.nan, False, (lam, good), tuple(probes), indeterminate=True)
        if st == MartingaleStatus.STRICT_LOCAL:
            bad = lam
            break
        good = lam
        step *= 2.0
    if bad is None:
        return LambdaZero(-math.inf, True, (floor, good), tuple(probes))

    while good - bad > tol:
        mid = 0.5 * (good + bad)
        st = status(mid)
        if st is None or st == MartingaleStatus.INDETERMINATE:
            return LambdaZero(math.nan, False, (bad, good), tuple(probes), indeterminate=True)
        if st == MartingaleStatus.MARTINGALE:
            good = mid
        else:
            bad = mid
    return LambdaZero(0.5 * (good + bad), False, (bad, good), tuple(probes))
