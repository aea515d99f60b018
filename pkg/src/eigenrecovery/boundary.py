"""Feller classification of the boundaries of ``dX = k dt + sigma dB``.

With ``gamma(x) = exp(-int_xi^x 2k/sigma^2)``::

    R(x) = gamma(x) int_xi^x 2 / (sigma^2 gamma)
    Q(x) = 2 / (sigma^2 gamma(x)) int_xi^x gamma

A boundary is inaccessible when ``R`` is not integrable near it.  An
inaccessible boundary is an entrance if ``Q`` is integrable there and natural
otherwise.  Integrability is judged by :mod:`eigenrecovery.integrals`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .integrals import DepthSchedule, IntegralVerdict, double_integral_verdict, single_integral_verdict
from .model import DerivedCoefficients, MarketModel, derive, evaluate_coefficient

__all__ = [
    "Classification",
    "BoundaryReport",
    "classify",
    "classify_model",
    "gamma_integral_verdicts",
]

_LOG2 = math.log(2.0)


class Classification(str, Enum):
    NATURAL = "natural"
    ENTRANCE = "entrance"
    ACCESSIBLE = "accessible"
    INDETERMINATE = "indeterminate"

    def __str__(self):
        return self.value

    @property
    def inaccessible(self) -> bool:
        return self in (Classification.NATURAL, Classification.ENTRANCE)


@dataclass(frozen=True)
class BoundaryReport:
    left: Classification
    right: Classification
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def non_explosive(self) -> bool:
        return self.left.inaccessible and self.right.inaccessible

    def to_dict(self) -> dict:
        return {
            "left": self.left.value,
            "right": self.right.value,
            "diagnostics": {
                side: {name: v.to_dict() for name, v in tests.items()} for side, tests in self.diagnostics.items()
            },
        }


class _ChartLogs:
    """log gamma, log(2/sigma^2) and log X' evaluated on chart points."""

    def __init__(self, model: MarketModel, derived: DerivedCoefficients):
        self.model = model
        self.derived = derived

    def __call__(self, u):
        chart = self.model.chart
        x = chart.to_x(u)
        d1, _ = chart.derivatives(u)
        sigma = evaluate_coefficient(self.model.sigma, x)
        gl = self.derived.gamma_log_u(u)
        return gl, _LOG2 - 2.0 * np.log(sigma), np.log(d1)


def _r_verdict(logs: _ChartLogs, u0, side, schedule):
    def outer(u):
        gl, _, ld = logs(u)
        return gl + ld

    def inner(u):
        gl, l2s, ld = logs(u)
        return l2s - gl + ld

    return double_integral_verdict(outer, inner, u0, side, schedule)


def _q_verdict(logs: _ChartLogs, u0, side, schedule):
    def outer(u):
        gl, l2s, ld = logs(u)
        return l2s - gl + ld

    def inner(u):
        gl, _, ld = logs(u)
        return gl + ld

    return double_integral_verdict(outer, inner, u0, side, schedule)


def _side_classification(model, derived, side, schedule):
    logs = _ChartLogs(model, derived)
    u0 = model.u_xi
    r_v = _r_verdict(logs, u0, side, schedule)
    diag = {"R": r_v}
    if r_v.convergent:
        return Classification.ACCESSIBLE, diag
    if not r_v.divergent:
        return Classification.INDETERMINATE, diag
    q_v = _q_verdict(logs, u0, side, schedule)
    diag["Q"] = q_v
    if q_v.convergent:
        return Classification.ENTRANCE, diag
    if q_v.divergent:
        return Classification.NATURAL, diag
    return Classification.INDETERMINATE, diag


def classify(
    model: MarketModel,
    side: str,
    derived: DerivedCoefficients | None = None,
    schedule: DepthSchedule = DepthSchedule(),
) -> Classification:
    if side not in ("left", "right"):
        raise ValueError("side must be 'left' or 'right'")
    derived = derived or derive(model)
    return _side_classification(model, derived, side, schedule)[0]


def classify_model(
    model: MarketModel,
    derived: DerivedCoefficients | None = None,
    schedule: DepthSchedule = DepthSchedule(),
) -> BoundaryReport:
    """Classify both boundaries and keep the integral traces."""
    derived = derived or derive(model)
    left, dl = _side_classification(model, derived, "left", schedule)
    right, dr = _side_classification(model, derived, "right", schedule)
    return BoundaryReport(left, right, {"left": dl, "right": dr})


def gamma_integral_verdicts(
    model: MarketModel,
    derived: DerivedCoefficients | None = None,
    schedule: DepthSchedule = DepthSchedule(),
) -> tuple[IntegralVerdict, IntegralVerdict]:
    """Verdicts for ``int_{left}^{xi} gamma`` and ``int_{xi}^{right} gamma``."""
    derived = derived or derive(model)
    chart = model.chart

    def integrand(u):
        d1, _ = chart.derivatives(u)
        return derived.gamma_log_u(u) + np.log(d1)

    u0 = model.u_xi
    return (
        single_integral_verdict(integrand, u0, "left", schedule),
        single_integral_verdict(integrand, u0, "right", schedule),
    )
