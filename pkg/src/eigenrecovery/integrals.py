"""Numerical L1-membership verdicts for improper integrals near a boundary.

Integrands are supplied as log-densities in chart coordinates, so values
spanning hundreds of orders of magnitude are harmless.  Partial integrals
``S_n`` from ``u0`` out to depth ``n * delta`` are accumulated on a uniform
grid with an exponential trapezoid rule (exact for log-linear integrands)
and judged by the increments ``d_n = S_n - S_{n-1}``:

* convergent: the last four increment ratios are at most 1/2 and the
  geometric tail estimate is below 1e-8 of ``S_n``;
* divergent: ``S_n > 1e12``, the last six increments are non-decreasing, or
  they follow a power law ``n^p`` with ``p >= -1`` (harmonic-type tails);
* otherwise the depth is extended up to a limit, then indeterminate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .exprdsl import DomainFault
from .model import QuadratureError

__all__ = [
    "CONVERGENT",
    "DIVERGENT",
    "INDETERMINATE",
    "DepthSchedule",
    "IntegralVerdict",
    "single_integral_verdict",
    "double_integral_verdict",
    "judge",
]

CONVERGENT = "convergent"
DIVERGENT = "divergent"
INDETERMINATE = "indeterminate"

LOG_DIVERGENCE_CAP = math.log(1e12)
RATIO_LIMIT = 0.5
TAIL_TOLERANCE = 1e-8
GRID_STEP = 0.01
MONOTONE_SLACK = 1e-6
POWER_SLACK = 0.05
POWER_FIT_TOL = 1e-3


@dataclass(frozen=True)
class DepthSchedule:
    delta: float = 2.0
    n_max: int = 10
    extension: int = 3  # coefficient-only integrals may go this many times deeper

    def __post_init__(self):
        if not (self.delta > 0 and self.n_max >= 6 and self.extension >= 1):
            raise ValueError("depth schedule needs delta > 0, n_max >= 6, extension >= 1")


@dataclass(frozen=True)
class IntegralVerdict:
    kind: str
    value: float | None = None
    log_trace: tuple = ()
    depths: tuple = ()
    note: str = field(default="", compare=False)

    @property
    def trace(self) -> tuple:
        with np.errstate(over="ignore"):
            return tuple(float(np.exp(v)) for v in self.log_trace)

    @property
    def convergent(self) -> bool:
        return self.kind == CONVERGENT

    @property
    def divergent(self) -> bool:
        return self.kind == DIVERGENT

    def to_dict(self) -> dict:
        return {"kind": self.kind, "value": self.value, "trace": list(self.trace), "depths": list(self.depths)}


def _log_increments(log_s: np.ndarray) -> np.ndarray:
    prev = np.concatenate(([-np.inf], log_s[:-1]))
    with np.errstate(divide="ignore", invalid="ignore"):
        diff = np.where(np.isfinite(prev), prev - log_s, -np.inf)
        return log_s + np.log1p(-np.exp(np.minimum(diff, 0.0)))


def _harmonic_tail(log_d: np.ndarray) -> bool:
    """Do the last increments decay like ``n^p`` with ``p >= -1``?

    Local log-log slopes are fitted as ``p + C/n + D/n^2`` and, as a rival,
    as a quadratic in ``n`` (the signature of exponential-type tails).  The
    power law must fit well and better than the rival.
    """
    if log_d.size < 8 or not np.all(np.isfinite(log_d[-7:])):
        return False
    n = np.arange(log_d.size - 6, log_d.size + 1, dtype=float)
    slopes = np.diff(log_d[-7:]) / np.diff(np.log(n))
    mid = np.sqrt(n[1:] * n[:-1])
    ones = np.ones_like(mid)
    fits = []
    for design in (np.column_stack([ones, 1.0 / mid, mid**-2]), np.column_stack([ones, mid, mid**2])):
        c, *_ = np.linalg.lstsq(design, slopes, rcond=None)
        fits.append((float(c[0]), float(np.sqrt(np.mean((design @ c - slopes) ** 2)))))
    (p_inf, rms_power), (_, rms_rival) = fits
    return p_inf >= -1.0 - POWER_SLACK and rms_power < POWER_FIT_TOL and rms_power < rms_rival


def judge(log_s) -> tuple[str, float | None]:
    """Classify a sequence of log partial integrals taken at equally spaced depths."""
    log_s = np.asarray(log_s, dtype=float)
    if log_s.size and log_s[-1] > LOG_DIVERGENCE_CAP:
        return DIVERGENT, None
    if log_s.size < 6:
        return INDETERMINATE, None
    log_d = _log_increments(log_s)
    last = log_d[-6:]
    if np.all(np.isfinite(last)) and np.all(np.diff(last) >= math.log1p(-MONOTONE_SLACK)):
        return DIVERGENT, None
    tail = log_d[-5:]
    if np.all(np.isfinite(tail)):
        log_ratios = np.diff(tail)
        if np.all(log_ratios <= math.log(RATIO_LIMIT)):
            rho = math.exp(float(np.max(log_ratios)))
            log_rest = float(tail[-1]) + math.log(rho / (1.0 - rho))
            if log_rest - float(log_s[-1]) < math.log(TAIL_TOLERANCE):
                return CONVERGENT, float(np.exp(log_s[-1]) + np.exp(log_rest))
    if _harmonic_tail(log_d):
        return DIVERGENT, None
    if np.all(~np.isfinite(log_d[-5:])) and np.isfinite(log_s[-1]):
        # increments vanished outright: the integrand is zero out there
        return CONVERGENT, float(np.exp(log_s[-1]))
    return INDETERMINATE, None


def _log_segments(ell: np.ndarray, step: float) -> np.ndarray:
    """Log of the exponential-trapezoid integral over each grid cell."""
    a, b = ell[:-1], ell[1:]
    out = np.empty(a.size)
    finite = np.isfinite(a) & np.isfinite(b)
    d = np.where(finite, b - a, 0.0)
    small = finite & (np.abs(d) < 1e-6)
    big = finite & ~small
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        # log((e^d - 1)/d), written to stay finite for large |d|
        pos = big & (d > 0)
        neg = big & (d < 0)
        out[pos] = a[pos] + d[pos] + np.log(-np.expm1(-d[pos])) - np.log(d[pos])
        out[neg] = a[neg] + np.log(-np.expm1(d[neg])) - np.log(-d[neg])
        out[small] = a[small] + 0.5 * d[small]
        rest = ~finite
        out[rest] = np.log(0.5) + np.logaddexp(a[rest], b[rest])
    return out + math.log(step)


def _log_cumulative(ell: np.ndarray, step: float, start: float = -np.inf) -> np.ndarray:
    seg = _log_segments(ell, step)
    cum = np.logaddexp.accumulate(np.concatenate(([start], seg)))
    return cum


class _Accumulator:
    """Grows the integration grid chunk by chunk away from ``u0``."""

    def __init__(self, u0, direction, step, log_outer, log_inner=None):
        self.u0 = u0
        self.sign = -1.0 if direction == "left" else 1.0
        self.step = step
        self.log_outer = log_outer
        self.log_inner = log_inner
        self.outer = np.empty(0)
        self.inner = np.empty(0)

    def extend(self, depth_to: float) -> float:
        """Advance to ``depth_to`` and return the log partial integral there."""
        n_have = self.outer.size
        n_need = int(round(depth_to / self.step)) + 1
        if n_need > n_have:
            u = self.u0 + self.sign * self.step * np.arange(n_have, n_need)
            parts = [np.asarray(self.log_outer(u), dtype=float)]
            if self.log_inner is not None:
                parts.append(np.asarray(self.log_inner(u), dtype=float))
            for arr in parts:
                bad = np.isnan(arr) | (arr == np.inf)
                if bad.any():
                    raise QuadratureError("non-finite integrand", float(u[bad][0]))
            self.outer = np.concatenate((self.outer, parts[0]))
            if self.log_inner is not None:
                self.inner = np.concatenate((self.inner, parts[1]))
        outer = self.outer[:n_need]
        if self.log_inner is not None:
            term = outer + _log_cumulative(self.inner[:n_need], self.step)
        else:
            term = outer
        return float(_log_cumulative(term, self.step)[-1])


def _run(acc: _Accumulator, schedule: DepthSchedule, max_depth_units: int) -> IntegralVerdict:
    logs: list[float] = []
    depths: list[float] = []
    note = ""
    for n in range(1, max_depth_units + 1):
        depth = n * schedule.delta
        try:
            with np.errstate(all="ignore"):
                val = acc.extend(depth)
        except (DomainFault, QuadratureError, FloatingPointError, ValueError) as exc:
            note = f"stopped at depth {depth}: {exc}"
            break
        logs.append(val)
        depths.append(depth)
        if n >= schedule.n_max:
            kind, value = judge(logs)
            if kind != INDETERMINATE:
                return IntegralVerdict(kind, value, tuple(logs), tuple(depths))
    kind, value = judge(logs) if len(logs) >= 6 else (INDETERMINATE, None)
    if kind == INDETERMINATE and not note:
        note = "no decision within depth limit"
    return IntegralVerdict(kind, value, tuple(logs), tuple(depths), note)


def single_integral_verdict(
    log_integrand,
    u0: float,
    direction: str,
    schedule: DepthSchedule = DepthSchedule(),
    extend: bool = True,
    step: float = GRID_STEP,
) -> IntegralVerdict:
    """Verdict for ``int exp(log_integrand(u)) du`` from ``u0`` to the ``direction`` boundary."""
    limit = schedule.n_max * (schedule.extension if extend else 1)
    return _run(_Accumulator(u0, direction, step, log_integrand), schedule, limit)


def double_integral_verdict(
    log_outer,
    log_inner,
    u0: float,
    direction: str,
    schedule: DepthSchedule = DepthSchedule(),
    extend: bool = True,
    step: float = GRID_STEP,
) -> IntegralVerdict:
    """Verdict for ``int e^{outer(u)} int_{u0}^{u} e^{inner(v)} dv du`` (magnitudes)."""
    limit = schedule.n_max * (schedule.extension if extend else 1)
    return _run(_Accumulator(u0, direction, step, log_outer, log_inner), schedule, limit)
