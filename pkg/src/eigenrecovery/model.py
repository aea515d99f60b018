"""Market model container, derived coefficients and coordinate changes.

A :class:`MarketModel` carries the four state-dependent coefficients

* ``b``     drift of the state under the risk-neutral measure,
* ``sigma`` state volatility (strictly positive),
* ``r``     short rate,
* ``v``     volatility of the numeraire,

plus the initial state ``xi`` and an open ``domain``.  Coefficients may be
:class:`~eigenrecovery.exprdsl.Expr` trees, plain numbers or vectorised
callables.

Every model also owns a :class:`Chart`, a smooth increasing bijection
``x = X(u)`` from the real line onto the domain.  Numerical work (ODE
integration, boundary integrals) happens in ``u``, where both boundaries sit
at ``u = -inf`` and ``u = +inf`` and the truncated working window is
``[u(xi) - T, u(xi) + T]``.  For the default domain ``(0, inf)`` the chart is
``x = e^u``, i.e. ordinary log coordinates.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Union

import numpy as np

from .exprdsl import BinOp, Call, DomainFault, Expr, Neg, Num, Var, parse, substitute

__all__ = [
    "ModelError",
    "QuadratureError",
    "Chart",
    "MarketModel",
    "DerivedCoefficients",
    "CumulativeIntegral",
    "derive",
    "evaluate_coefficient",
    "to_log_coordinates",
    "apply_monotone_map",
    "TransformedSolution",
]

Coefficient = Union[Expr, float, Callable]

DEFAULT_TRUNCATION = 20.0
GRID_POINTS = 401


class ModelError(ValueError):
    pass


class QuadratureError(ArithmeticError):
    def __init__(self, message: str, location: float):
        self.location = location
        super().__init__(f"{message} at x={location!r}")


def evaluate_coefficient(f: Coefficient, x) -> np.ndarray:
    """Evaluate a coefficient on ``x`` and broadcast to its shape."""
    xa = np.asarray(x, dtype=float)
    if isinstance(f, Expr):
        out = f(xa) if xa.ndim else np.asarray(f(float(xa)))
    elif callable(f):
        with np.errstate(all="ignore"):
            out = f(xa)
    else:
        out = float(f)
    return np.broadcast_to(np.asarray(out, dtype=float), xa.shape).copy() if xa.ndim else np.asarray(out, dtype=float)


# --------------------------------------------------------------------------- #
# Chart
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class Chart:
    """Increasing map ``x = X(u)`` from the real line onto ``(lo, hi)``."""

    lo: float
    hi: float

    @property
    def kind(self) -> str:
        lo_inf, hi_inf = math.isinf(self.lo), math.isinf(self.hi)
        if lo_inf and hi_inf:
            return "identity"
        if hi_inf:
            return "log"
        if lo_inf:
            return "neglog"
        return "logit"

    def to_x(self, u):
        u = np.asarray(u, dtype=float)
        k = self.kind
        if k == "identity":
            return u.copy()
        if k == "log":
            return self.lo + np.exp(u)
        if k == "neglog":
            return self.hi - np.exp(-u)
        s = 0.5 * (1.0 + np.tanh(0.5 * u))
        return self.lo + (self.hi - self.lo) * s

    def to_u(self, x):
        x = np.asarray(x, dtype=float)
        k = self.kind
        with np.errstate(divide="ignore"):
            if k == "identity":
                return x.copy()
            if k == "log":
                return np.log(x - self.lo)
            if k == "neglog":
                return -np.log(self.hi - x)
            return np.log(x - self.lo) - np.log(self.hi - x)

    def derivatives(self, u):
        """``(X'(u), X''(u))``."""
        u = np.asarray(u, dtype=float)
        k = self.kind
        if k == "identity":
            return np.ones_like(u), np.zeros_like(u)
        if k == "log":
            e = np.exp(u)
            return e, e
        if k == "neglog":
            e = np.exp(-u)
            return e, -e
        s = 0.5 * (1.0 + np.tanh(0.5 * u))
        w = self.hi - self.lo
        d1 = w * s * (1 - s)
        return d1, d1 * (1 - 2 * s)


# --------------------------------------------------------------------------- #
# Model
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class MarketModel:
    b: Coefficient
    sigma: Coefficient
    r: Coefficient
    v: Coefficient
    xi: float
    domain: tuple = (0.0, math.inf)
    truncation: float = DEFAULT_TRUNCATION
    name: str = field(default="custom", compare=False)

    def __post_init__(self):
        for name in ("b", "sigma", "r", "v"):
            f = getattr(self, name)
            if isinstance(f, str):
                object.__setattr__(self, name, parse(f))
        lo, hi = (float(d) for d in self.domain)
        object.__setattr__(self, "domain", (lo, hi))
        object.__setattr__(self, "xi", float(self.xi))
        if not lo < hi:
            raise ModelError(f"empty domain {self.domain}")
        if not lo < self.xi < hi:
            raise ModelError(f"initial state xi={self.xi} outside domain {self.domain}")
        if not (self.truncation > 0 and math.isfinite(self.truncation)):
            raise ModelError("truncation half-width must be positive and finite")
        x = self.sample_grid()
        try:
            b, s, r, v = self.coefficients(x)
        except DomainFault as exc:
            raise ModelError(f"coefficient evaluation failed: {exc}") from exc
        for label, arr in (("b", b), ("sigma", s), ("r", r), ("v", v)):
            bad = ~np.isfinite(arr)
            if bad.any():
                raise ModelError(f"coefficient {label} is not finite at x={x[bad][0]!r}")
        if np.any(s <= 0):
            raise ModelError(f"sigma must be positive, sigma({x[s <= 0][0]!r}) = {s[s <= 0][0]!r}")

    # -- geometry ---------------------------------------------------------- #

    @cached_property
    def chart(self) -> Chart:
        return Chart(*self.domain)

    @property
    def u_xi(self) -> float:
        return float(self.chart.to_u(self.xi))

    def u_window(self, depth: float | None = None) -> tuple[float, float]:
        d = self.truncation if depth is None else depth
        return self.u_xi - d, self.u_xi + d

    def x_window(self, depth: float | None = None) -> tuple[float, float]:
        lo, hi = self.u_window(depth)
        return float(self.chart.to_x(lo)), float(self.chart.to_x(hi))

    def sample_grid(self, n: int = GRID_POINTS, depth: float | None = None) -> np.ndarray:
        lo, hi = self.u_window(depth)
        x = self.chart.to_x(np.linspace(lo, hi, n))
        # the chart can round onto the boundary at extreme depth
        x = np.clip(x, np.nextafter(self.domain[0], math.inf), np.nextafter(self.domain[1], -math.inf))
        return x

    def with_truncation(self, depth: float) -> "MarketModel":
        return replace(self, truncation=depth)

    # -- coefficients ------------------------------------------------------ #

    def coefficients(self, x):
        return tuple(evaluate_coefficient(f, x) for f in (self.b, self.sigma, self.r, self.v))

    def rate(self, x):
        return evaluate_coefficient(self.r, x)

    def k(self, x):
        b, s, _, v = self.coefficients(x)
        return b - s * v

    def chart_operator(self, u):
        """Coefficients of the eigen-operator in chart coordinates.

        With ``h(x) = g(u)`` the operator reads ``1/2 A g'' + C g' - r g``.
        """
        x = self.chart.to_x(u)
        d1, d2 = self.chart.derivatives(u)
        b, s, r, v = self.coefficients(x)
        k = b - s * v
        a = (s / d1) ** 2
        c = k / d1 - 0.5 * s * s * d2 / d1**3
        return a, c, r

    def rate_floor(self, n: int = GRID_POINTS) -> float:
        """Smallest sampled short rate on the working window."""
        return float(np.min(self.rate(self.sample_grid(n))))


# --------------------------------------------------------------------------- #
# Quadrature
# --------------------------------------------------------------------------- #

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(10)
_GL20_NODES, _GL20_WEIGHTS = np.polynomial.legendre.leggauss(20)


def _gl(f, a, b, nodes=_GL_NODES, weights=_GL_WEIGHTS):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    half = 0.5 * (b - a)
    mid = 0.5 * (b + a)
    pts = mid[..., None] + half[..., None] * nodes
    vals = f(pts)
    if not np.all(np.isfinite(vals)):
        bad = pts[~np.isfinite(vals)]
        raise QuadratureError("non-finite integrand", float(bad.flat[0]))
    return half * (vals @ weights)


def _adaptive_panels(f, edges, tol):
    """Integrals over consecutive panels, splitting until 10-point Gauss agrees with its halves."""
    a, b = edges[:-1], edges[1:]
    out = np.zeros(a.size)
    todo = [(np.arange(a.size), a, b, 0)]
    while todo:
        idx, lo, hi, level = todo.pop()
        whole = _gl(f, lo, hi)
        mid = 0.5 * (lo + hi)
        halves = _gl(f, lo, mid) + _gl(f, mid, hi)
        # absolute tolerance, relaxed to a few ulps once panel values are large
        ok = np.abs(whole - halves) <= np.maximum(tol, 1e-14 * np.abs(halves))
        if level >= 30:
            ok[:] = True
        np.add.at(out, idx[ok], halves[ok])
        if not ok.all():
            m = ~ok
            todo.append((idx[m], lo[m], mid[m], level + 1))
            todo.append((idx[m], mid[m], hi[m], level + 1))
    return out


class CumulativeIntegral:
    """``F(u) = int_{u0}^{u} f``, tabulated on panels grown on demand."""

    def __init__(self, f, u0: float, panel: float = 0.05, tol: float = 1e-10, chunk: float = 2.0):
        self.f = f
        self.u0 = float(u0)
        self.panel = panel
        self.tol = tol
        self.chunk = chunk
        self._right = np.array([0.0])
        self._left = np.array([0.0])

    def _grow(self, arr, n_needed, sign):
        while arr.size - 1 < n_needed:
            n_new = max(int(self.chunk / self.panel), n_needed - arr.size + 1)
            start = arr.size - 1
            k = np.arange(start, start + n_new + 1)
            edges = self.u0 + sign * self.panel * k
            if sign < 0:
                pieces = -_adaptive_panels(self.f, edges[::-1], self.tol)[::-1]
            else:
                pieces = _adaptive_panels(self.f, edges, self.tol)
            # fsum-quality accumulation keeps long tables drift free
            arr = np.concatenate((arr, arr[-1] + np.cumsum(pieces)))
        return arr

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        flat = u.ravel()
        out = np.empty_like(flat)
        d = (flat - self.u0) / self.panel
        right = d >= 0
        if right.any():
            n = np.floor(d[right]).astype(int)
            self._right = self._grow(self._right, int(n.max()) + 1, 1)
            node = self.u0 + self.panel * n
            out[right] = self._right[n] + _gl(self.f, node, flat[right], _GL20_NODES, _GL20_WEIGHTS)
        if (~right).any():
            n = np.floor(-d[~right]).astype(int)
            self._left = self._grow(self._left, int(n.max()) + 1, -1)
            node = self.u0 - self.panel * n
            out[~right] = self._left[n] + _gl(self.f, node, flat[~right], _GL20_NODES, _GL20_WEIGHTS)
        out[flat == self.u0] = 0.0
        return out.reshape(u.shape)


class DerivedCoefficients:
    """``k = b - sigma v`` and ``log gamma(x) = -int_xi^x 2k/sigma^2``."""

    def __init__(self, model: MarketModel, tol: float = 1e-10):
        self.model = model
        chart = model.chart

        def integrand(u):
            x = chart.to_x(u)
            d1, _ = chart.derivatives(u)
            b, s, _, v = model.coefficients(x)
            return -2.0 * (b - s * v) / (s * s) * d1

        self._cum = CumulativeIntegral(integrand, model.u_xi, tol=tol)

    def k(self, x):
        return self.model.k(x)

    def gamma_log_u(self, u):
        return self._cum(u)

    def gamma_log(self, x):
        x = np.asarray(x, dtype=float)
        out = self._cum(self.model.chart.to_u(x))
        out = np.where(x == self.model.xi, 0.0, out)
        return float(out) if out.ndim == 0 else out

    def gamma(self, x):
        return np.exp(self.gamma_log(x))


def derive(model: MarketModel, tol: float = 1e-10) -> DerivedCoefficients:
    return DerivedCoefficients(model, tol=tol)


# --------------------------------------------------------------------------- #
# Coordinate changes
# --------------------------------------------------------------------------- #

_EXP_X = Call("exp", (Var(),))
_EXP_NEG_X = Call("exp", (Neg(Var()),))


def _compose_exp(f: Coefficient) -> Coefficient:
    """``f(e^y)`` keeping expressions symbolic where possible."""
    if isinstance(f, Expr):
        return substitute(f, _EXP_X)
    if callable(f):
        return lambda y: evaluate_coefficient(f, np.exp(y))
    return float(f)


def _log_drift(b: Coefficient, s: Coefficient) -> Coefficient:
    if isinstance(b, (Expr, int, float)) and isinstance(s, (Expr, int, float)):
        be = b if isinstance(b, Expr) else Num(float(b))
        se = s if isinstance(s, Expr) else Num(float(s))
        scaled = BinOp("*", se, _EXP_NEG_X)
        return BinOp(
            "-",
            BinOp("*", be, _EXP_NEG_X),
            BinOp("*", Num(0.5), BinOp("*", scaled, scaled)),
        )

    def drift(y):
        e = np.exp(-np.asarray(y, dtype=float))
        sv = evaluate_coefficient(s, y)
        return evaluate_coefficient(b, y) * e - 0.5 * (sv * e) ** 2

    return drift


def _log_vol(s: Coefficient) -> Coefficient:
    if isinstance(s, (Expr, int, float)):
        se = s if isinstance(s, Expr) else Num(float(s))
        return BinOp("*", se, _EXP_NEG_X)
    return lambda y: evaluate_coefficient(s, y) * np.exp(-np.asarray(y, dtype=float))


def to_log_coordinates(model: MarketModel) -> MarketModel:
    """Model for ``Y = ln X`` (Ito): drift ``b/x - sigma^2/(2x^2)``, volatility ``sigma/x``."""
    lo, hi = model.domain
    if lo < 0:
        raise ModelError("log coordinates need a domain inside (0, inf)")
    b = _compose_exp(model.b)
    s = _compose_exp(model.sigma)
    return MarketModel(
        b=_log_drift(b, s),
        sigma=_log_vol(s),
        r=_compose_exp(model.r),
        v=_compose_exp(model.v),
        xi=math.log(model.xi),
        domain=(math.log(lo) if lo > 0 else -math.inf, math.log(hi) if math.isfinite(hi) else math.inf),
        truncation=model.truncation,
        name=f"log({model.name})",
    )


class TransformedSolution:
    """``H(y) = h(pi^{-1}(y))`` for an eigen-solution ``h``; ``H(pi(xi)) = 1``."""

    def __init__(self, solution, pi_inverse, xi: float):
        self.base = solution
        self.pi_inverse = pi_inverse
        self.lam = solution.lam
        self.xi = xi
        self.slope = float(self.dlog_h(xi))

    def log_h(self, y):
        x = _derivs(self.pi_inverse, y)[0]
        return self.base.log_h(x)

    def h(self, y):
        return np.exp(self.log_h(y))

    def dlog_h(self, y):
        x, d1, _ = _derivs(self.pi_inverse, y)
        return self.base.dlog_h(x) * d1


def _derivs(f, x, step: float = 1e-4):
    """Value, first and second derivative: exact jets for expressions, 5-point differences otherwise."""
    x = np.asarray(x, dtype=float)
    if isinstance(f, Expr):
        return f.jet(x)
    h = step * (1.0 + np.abs(x))
    fm2, fm1, f0, fp1, fp2 = (np.asarray(f(x + k * h), dtype=float) for k in (-2, -1, 0, 1, 2))
    d1 = (fm2 - 8 * fm1 + 8 * fp1 - fp2) / (12 * h)
    d2 = (-fm2 + 16 * fm1 - 30 * f0 + 16 * fp1 - fp2) / (12 * h * h)
    return f0, d1, d2


def _image_endpoint(pi, x_end: float, inward: float) -> float:
    unbounded = -math.inf if inward > 0 else math.inf
    try:
        with np.errstate(all="ignore"):
            if math.isinf(x_end):
                # slow growth such as log still has an infinite image
                far, farther = (float(pi(math.copysign(p, x_end))) for p in (1e150, 1e300))
                if math.isfinite(farther) and abs(farther - far) <= 1e-9 * (1.0 + abs(farther)):
                    return farther
                return unbounded
            val = float(pi(x_end))
        if math.isfinite(val) and abs(val) < 1e200:
            return val
    except (DomainFault, OverflowError, ValueError):
        pass
    # map diverges at the endpoint; its direction follows monotonicity
    return -math.inf if inward > 0 else math.inf


def apply_monotone_map(model: MarketModel, solution, pi, pi_inverse, domain=None):
    """Push ``model`` and an eigen-solution through an increasing map ``y = pi(x)``.

    The new state has drift ``b pi' + sigma^2 pi''/2``, volatility ``sigma pi'``,
    and unchanged rate and numeraire volatility, all composed with ``pi^{-1}``.
    Returns ``(model_y, H)`` with ``H(y) = h(pi^{-1}(y))``.
    """
    x = model.sample_grid()
    pv, p1, _ = _derivs(pi, x)
    if not np.all(np.isfinite(p1)) or np.any(p1 <= 0) or np.any(np.diff(pv) <= 0):
        raise ModelError("map is not strictly increasing on the working grid")
    back = np.asarray(_derivs(pi_inverse, pv)[0], dtype=float)
    mismatch = np.max(np.abs(back - x) / (1.0 + np.abs(x)))
    if mismatch > 1e-6:
        raise ModelError(f"inverse map mismatch {mismatch:.3g} exceeds 1e-6")

    if domain is None:
        lo, hi = model.domain
        domain = (_image_endpoint(pi, lo, 1.0), _image_endpoint(pi, hi, -1.0))

    def at_preimage(y):
        xs = np.asarray(_derivs(pi_inverse, y)[0], dtype=float)
        _, d1, d2 = _derivs(pi, xs)
        return xs, d1, d2

    def drift(y):
        xs, d1, d2 = at_preimage(y)
        return evaluate_coefficient(model.b, xs) * d1 + 0.5 * evaluate_coefficient(model.sigma, xs) ** 2 * d2

    def vol(y):
        xs, d1, _ = at_preimage(y)
        return evaluate_coefficient(model.sigma, xs) * d1

    def rate(y):
        return evaluate_coefficient(model.r, at_preimage(y)[0])

    def numeraire_vol(y):
        return evaluate_coefficient(model.v, at_preimage(y)[0])

    xi_y = float(np.asarray(_derivs(pi, model.xi)[0]))
    mapped = MarketModel(
        b=drift,
        sigma=vol,
        r=rate,
        v=numeraire_vol,
        xi=xi_y,
        domain=domain,
        truncation=model.truncation,
        name=f"mapped({model.name})",
    )
    return mapped, TransformedSolution(solution, pi_inverse, xi_y)
