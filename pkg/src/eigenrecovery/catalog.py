"""Closed-form reference markets with known critical eigenvalue and extremal solution.

Each family returns a :class:`ClosedFormModel` that bundles the market, the
exact ``lambda_bar``, the exact upper slope ``M_lambda`` and ``h_lambda``.
They serve as oracles for the numerical solver.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import mpmath
import numpy as np

from .model import MarketModel
from .odesolve import residual
from .specfun import ParameterPoleError, log_gamma_signed, log_kummer_m

__all__ = [
    "ClosedFormModel",
    "ClosedFormSolution",
    "ExpectedSet",
    "black_scholes",
    "exp_cir",
    "log_dividend",
    "by_name",
    "CATALOG",
]

RESIDUAL_LIMIT = 1e-6


@dataclass(frozen=True)
class ExpectedSet:
    """Interval ``(lo, hi)`` of eigenvalues with inclusion flags, or empty."""

    lo: float = -math.inf
    lo_included: bool = False
    hi: float = math.nan
    hi_included: bool = False
    empty: bool = False
    reason: str = ""

    def contains(self, lam: float) -> bool:
        if self.empty:
            return False
        above = lam > self.lo or (self.lo_included and lam == self.lo)
        below = lam < self.hi or (self.hi_included and lam == self.hi)
        return above and below

    def to_dict(self) -> dict:
        return {
            "empty": self.empty,
            "lambda_lo": self.lo,
            "lo_included": self.lo_included,
            "lambda_hi": self.hi,
            "hi_included": self.hi_included,
            "reason": self.reason,
        }


class ClosedFormSolution:
    """``h_lambda`` on the state space, normalised to ``h(xi) = 1``.

    ``log_g``/``dlog_g`` act on the working variable ``y``; ``to_y`` maps a
    state to it, with ``dy/dx`` from ``dy``.
    """

    def __init__(self, lam, xi, log_g, dlog_g, to_y=np.log, dy=lambda x: 1.0 / x):
        self.lam = float(lam)
        self.xi = float(xi)
        self._log_g = log_g
        self._dlog_g = dlog_g
        self._to_y = to_y
        self._dy = dy
        self._offset = float(np.ravel(self._raw_log(np.array([xi])))[0])

    def _raw_log(self, x):
        x = np.asarray(x, dtype=float)
        return np.asarray(self._log_g(np.asarray(self._to_y(x), dtype=float)), dtype=float)

    def log_h(self, x):
        out = self._raw_log(x) - self._offset
        return float(out) if np.ndim(x) == 0 else out

    def h(self, x):
        with np.errstate(over="ignore"):
            return np.exp(self.log_h(x))

    def dlog_h(self, x):
        xa = np.asarray(x, dtype=float)
        out = np.asarray(self._dlog_g(np.asarray(self._to_y(xa), dtype=float)), dtype=float) * self._dy(xa)
        return float(out) if np.ndim(x) == 0 else out

    @property
    def slope(self) -> float:
        return float(self.dlog_h(self.xi))


@dataclass(frozen=True)
class ClosedFormModel:
    name: str
    model: MarketModel
    lambda_bar: float
    params: dict
    expected: ExpectedSet
    _solution: object = field(repr=False, compare=False, default=None)
    aux_models: dict = field(default_factory=dict, repr=False, compare=False)

    def solution(self, lam: float):
        """Closed-form solution at ``lam``, or None where no formula is available."""
        if lam > self.lambda_bar:
            return None
        return self._solution(float(lam))

    def m_slope(self, lam: float) -> float:
        sol = self.solution(lam)
        return math.nan if sol is None else sol.slope

    def h(self, lam: float, x):
        sol = self.solution(lam)
        if sol is None:
            raise ValueError(f"no closed form for lambda={lam} in {self.name}")
        return sol.h(x)

    def residual(self, lam: float, n: int = 201) -> float:
        return residual(self.model, self.solution(lam), n=n)

    def _validate(self):
        probe = self.lambda_bar - 0.01
        res = self.residual(probe)
        if not res <= RESIDUAL_LIMIT:
            raise ArithmeticError(f"{self.name}: closed form residual {res:.3g} at lambda={probe}")
        return self


# --------------------------------------------------------------------------- #
# Black-Scholes
# --------------------------------------------------------------------------- #


def black_scholes(r: float, delta: float, sigma: float, xi: float = 1.0) -> ClosedFormModel:
    """Geometric Brownian motion with constant rate and dividend yield."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not xi > 0:
        raise ValueError("xi must be positive")
    r, delta, sigma, xi = float(r), float(delta), float(sigma), float(xi)
    model = MarketModel(
        b=f"({r!r}-{delta!r}+{sigma!r}^2)*x",
        sigma=f"{sigma!r}*x",
        r=r,
        v=sigma,
        xi=xi,
        name="black_scholes",
    )
    c = 0.5 - (r - delta) / sigma**2
    lambda_bar = 0.5 * (sigma / 2 - (r - delta) / sigma) ** 2 + r

    def slope(lam):
        return c + math.sqrt(max(c * c + 2.0 * (r - lam) / sigma**2, 0.0))

    def make(lam):
        p = slope(lam)
        return ClosedFormSolution(lam, xi, lambda y: p * y, lambda y: np.full_like(y, p))

    if 2.0 * (r - delta) >= sigma**2:
        expected = ExpectedSet(hi=r, hi_included=False)
    else:
        expected = ExpectedSet(hi=lambda_bar, hi_included=True)
    params = {"r": r, "delta": delta, "sigma": sigma, "xi": xi}
    return ClosedFormModel("black_scholes", model, lambda_bar, params, expected, make)._validate()


# --------------------------------------------------------------------------- #
# Exponential CIR
# --------------------------------------------------------------------------- #


def _log_m_vec(a, b, z):
    out = np.empty(np.shape(z))
    for i, zi in enumerate(np.ravel(z)):
        lm, sign = log_kummer_m(a, b, float(zi))
        if sign <= 0:
            raise ArithmeticError(f"Kummer function not positive at a={a}, b={b}, z={zi}")
        out.flat[i] = lm
    return out


def exp_cir(r: float, delta: float, sigma: float, xi: float = math.e) -> ClosedFormModel:
    """Stock ``S = e^Y`` with ``Y`` an extended CIR process on ``(0, inf)``.

    ``model`` is the market in the price ``s`` on ``(1, inf)``; ``aux_models['y']``
    is the same market written in ``y = ln s``.
    """
    r, delta, sigma, xi = float(r), float(delta), float(sigma), float(xi)
    theta = r - delta
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not 2.0 * theta >= sigma**2:
        raise ValueError("exp_cir needs 2(r - delta) >= sigma^2")
    if not xi > 1.0:
        raise ValueError("exp_cir needs xi > 1 so that ln(xi) > 0")
    s2 = sigma**2
    model = MarketModel(
        b=f"x*({theta!r}+{s2!r}*log(x))",
        sigma=f"{sigma!r}*x*sqrt(log(x))",
        r=r,
        v=f"{sigma!r}*sqrt(log(x))",
        xi=xi,
        domain=(1.0, math.inf),
        name="exp_cir",
    )
    y_model = MarketModel(
        b=f"{theta!r}+0.5*{s2!r}*x",
        sigma=f"{sigma!r}*sqrt(x)",
        r=r,
        v=f"{sigma!r}*sqrt(x)",
        xi=math.log(xi),
        domain=(0.0, math.inf),
        name="exp_cir_y",
    )
    beta = 2.0 * theta / s2

    def make(lam):
        a = 2.0 * (r - lam) / s2

        def log_g(y):
            return _log_m_vec(a, beta, y)

        def dlog_g(y):
            if a == 0.0:
                return np.zeros_like(y)
            return (a / beta) * np.exp(_log_m_vec(a + 1.0, beta + 1.0, y) - _log_m_vec(a, beta, y))

        return ClosedFormSolution(lam, xi, log_g, dlog_g)

    expected = ExpectedSet(empty=True, reason="usual set empty: entrance left boundary")
    params = {"r": r, "delta": delta, "sigma": sigma, "xi": xi}
    out = ClosedFormModel("exp_cir", model, r, params, expected, make, {"y": y_model})
    return out._validate()


def exp_cir_slope_formula(r, delta, sigma, xi, lam) -> float:
    """Upper slope at ``xi`` as a ratio of Kummer functions."""
    theta = r - delta
    a = 2.0 * (r - lam) / sigma**2
    beta = 2.0 * theta / sigma**2
    y = math.log(xi)
    num, sn = log_kummer_m(a + 1.0, beta + 1.0, y)
    den, sd = log_kummer_m(a, beta, y)
    return (r - lam) / (theta * xi) * sn * sd * math.exp(num - den)


# --------------------------------------------------------------------------- #
# Log dividend
# --------------------------------------------------------------------------- #


def _log_recip_gamma(x: float):
    """``(log|1/Gamma(x)|, sign)``; sign 0 at the poles."""
    if x <= 0 and x == math.floor(x):
        return -math.inf, 0
    lg, sign = log_gamma_signed(x)
    return -lg, sign


def log_dividend(r: float, b: float, sigma: float, xi: float = 1.0) -> ClosedFormModel:
    """Constant volatility with dividend rate ``b ln S``.

    In ``y = ln s`` the extremal solution is a parabolic-cylinder type
    combination of two Kummer functions centred at
    ``kappa = r/b - sigma^2/(2b)``.  For ``y < kappa`` it equals
    ``sqrt(pi) U(alpha, 1/2, z)`` and is evaluated that way to avoid
    cancellation.
    """
    r, b, sigma, xi = float(r), float(b), float(sigma), float(xi)
    if not b > 0:
        raise ValueError("b must be positive")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    if not xi > 0:
        raise ValueError("xi must be positive")
    s2 = sigma**2
    model = MarketModel(
        b=f"({r!r}+{s2!r}-{b!r}*log(x))*x",
        sigma=f"{sigma!r}*x",
        r=r,
        v=sigma,
        xi=xi,
        name="log_dividend",
    )
    kappa = r / b - s2 / (2.0 * b)
    q = b / s2
    log_sqrt_pi = 0.5 * math.log(math.pi)
    # continuation of sqrt(pi) U(alpha, 1/2, q t^2) through t = 0 carries a factor pi
    log_pi = math.log(math.pi)

    def make(lam):
        alpha = (r - lam) / (2.0 * b)
        if alpha < 0:
            return None
        lr1, s1 = _log_recip_gamma(0.5 + alpha)
        lr2, s2_ = _log_recip_gamma(alpha)
        if s1 == 0:
            raise ParameterPoleError(f"Gamma pole at 1/2 + alpha = {0.5 + alpha}")

        def upper_terms(t, a1, b1, a2, b2, scale2):
            """log of ``pi (M(a1,b1,z) rg1 + scale2 * t * M(a2,b2,z) rg2)`` for ``t >= 0``."""
            z = q * t * t
            first = _log_m_vec(a1, b1, z) + lr1 + log_pi
            if s2_ == 0:
                return first
            with np.errstate(divide="ignore"):
                second = _log_m_vec(a2, b2, z) + lr2 + log_pi + np.log(scale2 * t)
            return np.logaddexp(first, second)

        def log_g(y):
            shape = np.shape(y)
            y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
            t = y - kappa
            out = np.empty_like(t)
            hi = t >= 0
            if hi.any():
                out[hi] = upper_terms(t[hi], alpha, 0.5, alpha + 0.5, 1.5, 2.0 * math.sqrt(q))
            for i in np.flatnonzero(~hi):
                z = q * t[i] * t[i]
                out[i] = log_sqrt_pi + float(mpmath.log(mpmath.hyperu(alpha, 0.5, z)))
            return out.reshape(shape)

        def dlog_g(y):
            shape = np.shape(y)
            y = np.atleast_1d(np.asarray(y, dtype=float)).ravel()
            t = y - kappa
            out = np.empty_like(t)
            lg = log_g(y).ravel()
            hi = t >= 0
            if hi.any():
                th = t[hi]
                z = q * th * th
                # d/dy of the first term: 4 alpha q t M(alpha+1, 3/2, z) / Gamma(1/2+alpha)
                parts = []
                if alpha > 0:
                    with np.errstate(divide="ignore"):
                        parts.append(_log_m_vec(alpha + 1.0, 1.5, z) + lr1 + np.log(4.0 * alpha * q * th))
                if s2_ != 0:
                    c = 2.0 * math.sqrt(q)
                    parts.append(_log_m_vec(alpha + 0.5, 1.5, z) + lr2 + math.log(c))
                    with np.errstate(divide="ignore"):
                        parts.append(
                            _log_m_vec(alpha + 1.5, 2.5, z)
                            + lr2
                            + np.log(c * (alpha + 0.5) / 1.5 * 2.0 * q * th * th)
                        )
                if parts:
                    out[hi] = np.exp(np.logaddexp.reduce(np.vstack(parts), axis=0) + log_pi - lg[hi])
                else:
                    out[hi] = 0.0
            for i in np.flatnonzero(~hi):
                z = q * t[i] * t[i]
                if alpha == 0:
                    out[i] = 0.0
                    continue
                d = 2.0 * alpha * q * abs(t[i]) * mpmath.hyperu(alpha + 1.0, 1.5, z) / mpmath.hyperu(alpha, 0.5, z)
                out[i] = float(d)
            return out.reshape(shape)

        return ClosedFormSolution(lam, xi, log_g, dlog_g)

    expected = ExpectedSet(hi=r, hi_included=False)
    params = {"r": r, "b": b, "sigma": sigma, "xi": xi}
    return ClosedFormModel("log_dividend", model, r, params, expected, make)._validate()


CATALOG = {"black_scholes": black_scholes, "exp_cir": exp_cir, "log_dividend": log_dividend}


def by_name(name: str, **params) -> ClosedFormModel:
    try:
        factory = CATALOG[name]
    except KeyError:
        raise ValueError(f"unknown catalog model {name!r}; choose from {sorted(CATALOG)}") from None
    return factory(**params)
