"""Positive solutions of ``1/2 sigma^2 h'' + k h' - r h = -lambda h``.

Everything is integrated in the model's chart coordinate ``u`` using the
Prüfer substitution ``g = rho sin(theta)``, ``g' = rho cos(theta)`` where
``g(u) = h(X(u))``.  With ``P = 2C/A`` and ``Q = 2(lambda - r)/A``::

    theta'    = cos^2 + P sin cos + Q sin^2
    log rho'  = sin cos (1 - Q) - P cos^2

Zeros of ``g`` are exactly the points where ``theta`` passes a multiple of
``pi``, and it can only pass them upwards (``theta' = 1`` there), so
positivity on an interval reduces to comparing ``theta`` at its ends.  The
amplitude lives in log space, so no rescaling is ever needed.

Extremal slopes.  The largest admissible slope ``M`` belongs to the solution
that is smallest near the left boundary.  It is computed by starting at the
left end of the working window with the local decaying exponent (the larger
root ``p+`` of ``A p^2/2 + C p + lambda - r = 0``, exact for constant
coefficients) and integrating towards ``xi``, which is the numerically stable
direction.  ``m`` is the mirror image on the right with ``p-``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .exprdsl import DomainFault
from .model import MarketModel

__all__ = [
    "OdeSolveError",
    "HypothesisViolation",
    "ZeroCrossing",
    "EigenSolution",
    "CandidateSlice",
    "CriticalLambda",
    "integrate",
    "solve",
    "slope_bounds",
    "critical_lambda",
    "residual",
    "tail_exponents",
]

RTOL = 1e-10
ATOL = 1e-12
SENSITIVITY_LIMIT = 1e-4
SLICE_MATCH = 1e-7


class OdeSolveError(RuntimeError):
    def __init__(self, message: str, location: float | None = None):
        self.location = location
        if location is not None:
            message = f"{message} (near x={location!r})"
        super().__init__(message)


class HypothesisViolation(ValueError):
    pass


@dataclass(frozen=True)
class ZeroCrossing:
    """The integrated solution vanished at ``x0`` before reaching the window edge."""

    x0: float
    direction: str


# --------------------------------------------------------------------------- #
# Prüfer integration
# --------------------------------------------------------------------------- #


def _operator_pq(model: MarketModel, lam: float, u: float):
    try:
        a, c, r = model.chart_operator(u)
    except DomainFault as exc:
        raise OdeSolveError(f"coefficient fault: {exc}", float(model.chart.to_x(u))) from exc
    a, c, r = float(a), float(c), float(r)
    if not (math.isfinite(a) and math.isfinite(c) and math.isfinite(r)) or a <= 0:
        raise OdeSolveError("non-finite operator coefficient", float(model.chart.to_x(u)))
    return 2.0 * c / a, 2.0 * (lam - r) / a


class _Scale:
    """Smooth positive ``S(u)`` tracking the local frequency of the equation.

    ``log S`` is a cubic spline of ``1/2 log(1 + P^2 + sqrt(1 + Q^2))``, so
    ``S'/S`` is exact for the ``S`` actually used.
    """

    def __init__(self, model: MarketModel, lam: float, u_lo: float, u_hi: float, step: float = 0.05):
        n = max(int(math.ceil((u_hi - u_lo) / step)), 4)
        grid = np.linspace(u_lo - step, u_hi + step, n + 3)
        try:
            with np.errstate(all="ignore"):
                a, c, r = (np.asarray(t, dtype=float) for t in model.chart_operator(grid))
                p = 2.0 * c / a
                q = 2.0 * (lam - r) / a
                log_s = 0.5 * np.log1p(p * p + np.hypot(1.0, q))
        except DomainFault as exc:
            raise OdeSolveError(f"coefficient fault: {exc}", float(model.chart.to_x(exc.x))) from exc
        bad = ~np.isfinite(log_s)
        if bad.any():
            raise OdeSolveError("non-finite operator coefficient", float(model.chart.to_x(grid[bad][0])))
        self.spline = CubicSpline(grid, log_s)
        self.dspline = self.spline.derivative()

    def __call__(self, u):
        """``(S, S'/S)``."""
        return np.exp(self.spline(u)), self.dspline(u)


def _prufer(model: MarketModel, lam: float, scale: _Scale):
    """Scaled Prüfer system: ``g = rho sin(theta)``, ``g' = S rho cos(theta)``."""

    def coeffs(u):
        p, q = _operator_pq(model, lam, u)
        sv, ds = scale(u)
        return p, q, float(sv), float(ds)

    def rhs(u, y):
        p, q, sv, ds = coeffs(u)
        s, c = math.sin(y[0]), math.cos(y[0])
        qs = q / sv
        return [sv * c * c + (p + ds) * s * c + qs * s * s, (sv - qs) * s * c - (p + ds) * c * c]

    def jac(u, y):
        p, q, sv, ds = coeffs(u)
        s2, c2 = math.sin(2 * y[0]), math.cos(2 * y[0])
        qs = q / sv
        return [[(qs - sv) * s2 + (p + ds) * c2, 0.0], [(sv - qs) * c2 + (p + ds) * s2, 0.0]]

    return rhs, jac


def tail_exponents(model: MarketModel, lam: float, u: float):
    """Roots ``(p-, p+)`` of ``A p^2/2 + C p + (lambda - r) = 0`` at ``u``; None if complex."""
    a, c, r = (float(t) for t in model.chart_operator(u))
    if not (a > 0 and math.isfinite(a) and math.isfinite(c) and math.isfinite(r)):
        raise OdeSolveError("degenerate operator coefficients", float(model.chart.to_x(u)))
    e = lam - r
    disc = c * c - 2.0 * a * e
    if disc < 0:
        # a double root can come out slightly complex after rounding
        if disc < -1e-12 * (c * c + abs(2.0 * a * e)):
            return None
        disc = 0.0
    q = -(c + math.copysign(math.sqrt(disc), c))
    if q == 0.0:
        return 0.0, 0.0
    roots = sorted((q / a, 2.0 * e / q))
    return roots[0], roots[1]


@dataclass
class _Piece:
    """One integrated stretch, with the shift that normalises ``h(xi) = 1``."""

    sol: object
    scale: _Scale
    u_a: float
    u_b: float
    theta_shift: float = 0.0
    log_offset: float = 0.0
    nodes: np.ndarray = field(default=None, repr=False)

    def state(self, u):
        lo, hi = min(self.u_a, self.u_b), max(self.u_a, self.u_b)
        uc = np.clip(u, lo, hi)
        y = self.sol(uc)
        return y[0] + self.theta_shift, y[1] + self.log_offset, uc


def _angle(w: float, sv: float) -> float:
    """Prüfer angle in (0, pi) for log-derivative ``w`` and scale ``S``."""
    return math.atan2(sv, w)


def _run(model, lam, u0, u1, rtol, w0=None, theta0=None, stop_at_zero=False):
    scale = _Scale(model, lam, min(u0, u1), max(u0, u1))
    if theta0 is None:
        theta0 = _angle(w0, float(scale(u0)[0]))
    rhs, jac = _prufer(model, lam, scale)
    events = None
    if stop_at_zero:
        k_lo = math.floor(theta0 / math.pi)
        edge = (k_lo + 1) * math.pi if u1 > u0 else k_lo * math.pi

        def hit(u, y):
            # distance to the band edge the angle can cross in this direction
            return y[0] - edge

        hit.terminal = True
        events = [hit]
    res, failure = None, None
    for method in ("LSODA", "Radau"):
        try:
            res = solve_ivp(
                rhs,
                (u0, u1),
                [theta0, 0.0],
                method=method,
                jac=jac,
                rtol=rtol,
                atol=ATOL,
                dense_output=True,
                events=events,
            )
        except OdeSolveError:
            raise
        except (FloatingPointError, ValueError, OverflowError) as exc:
            # LSODA's dense output rejects zero-length steps near huge |u|
            failure = exc
            continue
        if res.status != -1:
            break
    if res is None:
        raise OdeSolveError(
            f"integration failed (step-size underflow or stiffness): {failure}", float(model.chart.to_x(u0))
        ) from failure
    if res.status == -1:
        loc = float(model.chart.to_x(res.t[-1])) if res.t.size else None
        raise OdeSolveError(f"integrator stopped: {res.message}", loc)
    return res, scale


def _piece_from(res, scale, u0) -> _Piece:
    return _Piece(sol=res.sol, scale=scale, u_a=float(u0), u_b=float(res.t[-1]), nodes=np.asarray(res.t))


# --------------------------------------------------------------------------- #
# Solution object
# --------------------------------------------------------------------------- #


class EigenSolution:
    """Positive solution ``h`` with ``h(xi) = 1`` on the working window.

    ``log_h``, ``h``, ``dlog_h`` (= h'/h) and ``d2_over_h`` (= h''/h) accept
    state values ``x``.  Outside the window the log-derivative is frozen at its
    edge value, i.e. ``h`` continues as a power/exponential in chart units.
    """

    def __init__(self, model: MarketModel, lam: float, left: _Piece | None, right: _Piece | None):
        self.model = model
        self.lam = float(lam)
        self.left = left
        self.right = right
        self.xi = model.xi
        self.u_xi = model.u_xi
        self._normalise()
        self.slope = float(self.dlog_h(self.xi))

    def _normalise(self):
        for piece in (self.left, self.right):
            if piece is None:
                continue
            theta, logr = piece.sol(self.u_xi)
            band = math.floor(theta / math.pi)
            piece.theta_shift = -band * math.pi
            piece.log_offset = -(logr + math.log(math.sin(theta - band * math.pi)))

    @property
    def truncation(self):
        lo = min(self.left.u_a, self.left.u_b) if self.left is not None else self.u_xi
        hi = max(self.right.u_a, self.right.u_b) if self.right is not None else self.u_xi
        return float(self.model.chart.to_x(lo)), float(self.model.chart.to_x(hi))

    def _chart_eval(self, u, need_dw: bool = False):
        """``(log g, w = g'/g, w')`` in chart coordinates, with edge extrapolation."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        logg = np.empty_like(u)
        w = np.empty_like(u)
        dw = np.empty_like(u)
        # xi itself belongs to the right piece unless only the left one exists
        at_left = u < self.u_xi if self.right is not None else u <= self.u_xi
        for piece, mask in ((self.left, at_left), (self.right, ~at_left)):
            if not mask.any():
                continue
            if piece is None:
                raise ValueError("solution was only integrated on the other side of xi")
            theta, logr, uc = piece.state(u[mask])
            sv, ds = piece.scale(uc)
            sn, cs = np.sin(theta), np.cos(theta)
            wi = sv * cs / sn
            # beyond the window: frozen log-derivative
            lg = logr + np.log(sn) + wi * (u[mask] - uc)
            dwi = np.zeros_like(wi)
            if need_dw:
                with np.errstate(all="ignore"):
                    a, c, r = (np.asarray(t, dtype=float) for t in self.model.chart_operator(uc))
                p, q = 2.0 * c / a, 2.0 * (self.lam - r) / a
                dtheta = sv * cs * cs + (p + ds) * sn * cs + q / sv * sn * sn
                dwi = ds * wi - sv * dtheta / (sn * sn)
                dwi[u[mask] != uc] = 0.0
            logg[mask], w[mask], dw[mask] = lg, wi, dwi
        return logg, w, dw

    def _to_u(self, x):
        return self.model.chart.to_u(np.asarray(x, dtype=float))

    @staticmethod
    def _shape(x, arr):
        return float(arr[0]) if np.ndim(x) == 0 else arr.reshape(np.shape(x))

    def log_h(self, x):
        return self._shape(x, self._chart_eval(np.ravel(self._to_u(x)))[0])

    def h(self, x):
        return np.exp(self.log_h(x))

    def dlog_h(self, x):
        u = np.ravel(self._to_u(x))
        _, w, _ = self._chart_eval(u)
        d1, _ = self.model.chart.derivatives(u)
        return self._shape(x, w / d1)

    def d2_over_h(self, x):
        """``h''/h`` from the differential equation itself."""
        u = np.ravel(self._to_u(x))
        _, w, dw = self._chart_eval(u, need_dw=True)
        d1, d2 = self.model.chart.derivatives(u)
        # h'/h = w/X', d/dx(h'/h) = (w' - w X''/X') / X'^2
        dpsi = (dw - w * d2 / d1) / d1**2
        return self._shape(x, dpsi + (w / d1) ** 2)

    def grid(self) -> np.ndarray:
        """Integrator nodes as a structured array with fields x, h, dh."""
        us = []
        for piece in (self.left, self.right):
            if piece is not None and piece.nodes is not None:
                us.append(piece.nodes)
        u = np.unique(np.concatenate(us)) if us else np.array([self.u_xi])
        x = self.model.chart.to_x(u)
        lh = self.log_h(x)
        out = np.empty(u.size, dtype=[("x", float), ("h", float), ("dh", float)])
        out["x"] = x
        with np.errstate(over="ignore"):
            out["h"] = np.exp(lh)
            out["dh"] = out["h"] * self.dlog_h(x)
        return out


# --------------------------------------------------------------------------- #
# Public operations
# --------------------------------------------------------------------------- #


def integrate(model: MarketModel, lam: float, slope: float, direction: str, rtol: float = RTOL):
    """Integrate from ``xi`` with ``h(xi)=1, h'(xi)=slope`` to one window edge.

    Returns a one-sided :class:`EigenSolution`, or :class:`ZeroCrossing` if ``h``
    vanishes first.
    """
    if direction not in ("left", "right"):
        raise ValueError("direction must be 'left' or 'right'")
    u_lo, u_hi = model.u_window()
    d1, _ = model.chart.derivatives(model.u_xi)
    target = u_lo if direction == "left" else u_hi
    res, scale = _run(model, lam, model.u_xi, target, rtol, w0=float(slope) * float(d1), stop_at_zero=True)
    if res.status == 1:
        return ZeroCrossing(x0=float(model.chart.to_x(res.t_events[0][0])), direction=direction)
    piece = _piece_from(res, scale, model.u_xi)
    return EigenSolution(model, lam, piece if direction == "left" else None, piece if direction == "right" else None)


@dataclass(frozen=True)
class _SideResult:
    slope: float
    feasible: bool
    piece: _Piece | None
    reason: str = ""


def _extremal_side(model, lam, side, depth, tail, rtol) -> _SideResult:
    """Slope at ``xi`` of the solution pinned at the ``side`` window edge."""
    u_xi = model.u_xi
    u_edge = u_xi - depth if side == "left" else u_xi + depth
    if tail == "dirichlet":
        res, scale = _run(model, lam, u_edge, u_xi, rtol, theta0=0.0 if side == "left" else math.pi)
    else:
        roots = tail_exponents(model, lam, u_edge)
        if roots is None:
            return _SideResult(-math.inf if side == "left" else math.inf, False, None, "oscillatory tail")
        res, scale = _run(model, lam, u_edge, u_xi, rtol, w0=roots[1] if side == "left" else roots[0])
    theta_xi = float(res.y[0, -1])
    ok = theta_xi < math.pi if side == "left" else theta_xi > 0.0
    if tail == "dirichlet":
        ok = ok and (theta_xi > 0.0 if side == "left" else theta_xi < math.pi)
    if not ok:
        return _SideResult(-math.inf if side == "left" else math.inf, False, None, "zero inside window")
    d1, _ = model.chart.derivatives(u_xi)
    sv = float(scale(u_xi)[0])
    slope = sv * (math.cos(theta_xi) / math.sin(theta_xi)) / float(d1)
    return _SideResult(slope, True, _piece_from(res, scale, u_edge), "")


@dataclass(frozen=True)
class CandidateSlice:
    lam: float
    m_lambda: float
    M_lambda: float
    nonempty: bool
    truncation_sensitivity: float
    indeterminate: bool = False
    diagnostics: dict = field(default_factory=dict, compare=False)

    @property
    def width(self) -> float:
        return self.M_lambda - self.m_lambda


def _slice_nonempty(m, big_m, slope_tol):
    if not (math.isfinite(m) and math.isfinite(big_m)):
        return False
    return m <= big_m + slope_tol * (1.0 + abs(big_m) + abs(m))


def slope_bounds(
    model: MarketModel,
    lam: float,
    tail: str = "asymptotic",
    rtol: float = RTOL,
    slope_tol: float = 1e-10,
    check_sensitivity: bool = True,
) -> CandidateSlice:
    """Extremal slopes ``m_lambda <= M_lambda`` of positive solutions at ``lambda``."""
    if not math.isfinite(lam):
        raise ValueError("lambda must be finite")
    if tail not in ("asymptotic", "dirichlet"):
        raise ValueError("tail must be 'asymptotic' or 'dirichlet'")
    depth = model.truncation
    left = _extremal_side(model, lam, "left", depth, tail, rtol)
    right = _extremal_side(model, lam, "right", depth, tail, rtol)
    nonempty = left.feasible and right.feasible and _slice_nonempty(right.slope, left.slope, slope_tol)
    sensitivity = 0.0
    diag = {"left": left.reason or "ok", "right": right.reason or "ok"}
    if check_sensitivity and left.feasible:
        half = _extremal_side(model, lam, "left", 0.5 * depth, tail, rtol)
        if half.feasible:
            sensitivity = abs(half.slope - left.slope)
            diag["M_half_depth"] = half.slope
        else:
            sensitivity = math.inf
            diag["M_half_depth"] = None
    indeterminate = sensitivity > SENSITIVITY_LIMIT * (1.0 + abs(left.slope)) if left.feasible else False
    return CandidateSlice(
        lam=float(lam),
        m_lambda=right.slope,
        M_lambda=left.slope,
        nonempty=nonempty,
        truncation_sensitivity=sensitivity,
        indeterminate=indeterminate,
        diagnostics=diag,
    )


def solve(model: MarketModel, lam: float, slope="M", tail: str = "asymptotic", rtol: float = RTOL) -> EigenSolution:
    """Two-sided positive solution at ``lambda``.

    ``slope`` is a number, ``"M"`` (largest admissible slope) or ``"m"``
    (smallest).  The side pinned by an extremal choice is integrated inward
    from the window edge; every other stretch is integrated outward from xi,
    which keeps both directions numerically stable.
    """
    depth = model.truncation
    pieces = {}
    if slope in ("M", "m"):
        side = "left" if slope == "M" else "right"
        pinned = _extremal_side(model, lam, side, depth, tail, rtol)
        if not pinned.feasible:
            raise OdeSolveError(f"no positive solution at lambda={lam}: {pinned.reason} on the {side}")
        pieces[side] = pinned.piece
        z = pinned.slope
        other = "right" if side == "left" else "left"
    else:
        z = float(slope)
        other = None
    for direction in ("left", "right"):
        if direction in pieces:
            continue
        half = integrate(model, lam, z, direction, rtol=rtol)
        if isinstance(half, ZeroCrossing) and other == direction:
            # at a degenerate slice (M = m) outward integration is unstable;
            # the solution pinned on this side is the same one
            pinned = _extremal_side(model, lam, direction, depth, tail, rtol)
            if pinned.feasible and abs(pinned.slope - z) <= SLICE_MATCH * (1.0 + abs(z)):
                pieces[direction] = pinned.piece
                continue
        if isinstance(half, ZeroCrossing):
            raise OdeSolveError(
                f"solution with slope {z!r} vanishes on the {direction} at lambda={lam}", half.x0
            )
        pieces[direction] = half.left if direction == "left" else half.right
    return EigenSolution(model, lam, pieces["left"], pieces["right"])


@dataclass(frozen=True)
class CriticalLambda:
    value: float
    bracket: tuple
    rate_floor: float
    evaluations: int
    indeterminate: bool = False

    def __float__(self):
        return self.value


def critical_lambda(
    model: MarketModel,
    tol: float = 1e-6,
    growth: float = 1.0,
    max_expansions: int = 40,
    tail: str = "asymptotic",
    rtol: float = RTOL,
) -> CriticalLambda:
    """Largest ``lambda`` admitting a positive solution, by bisection on slice nonemptiness."""
    floor = model.rate_floor()
    if floor < 0:
        raise HypothesisViolation(f"short rate takes negative values (min sampled {floor!r})")
    count = 0
    indeterminate = False

    def nonempty(lam):
        nonlocal count, indeterminate
        count += 1
        sl = slope_bounds(model, lam, tail=tail, rtol=rtol, check_sensitivity=False)
        return sl.nonempty

    lo = floor
    if not nonempty(lo):
        # the floor bound is exact in theory; a miss means truncation effects
        indeterminate = True
        step = growth
        for _ in range(max_expansions):
            lo = floor - step
            if nonempty(lo):
                break
            step *= 2
        else:
            raise OdeSolveError("no lambda with a positive solution found below the rate floor")
    step = growth
    hi = floor + step
    expansions = 0
    while nonempty(hi):
        lo = hi
        step *= 2
        hi = floor + step
        expansions += 1
        if expansions > max_expansions:
            raise OdeSolveError("critical lambda not bracketed; positive solutions persist")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if nonempty(mid):
            lo = mid
        else:
            hi = mid
    return CriticalLambda(
        value=0.5 * (lo + hi),
        bracket=(lo, hi),
        rate_floor=floor,
        evaluations=count,
        indeterminate=indeterminate,
    )


def residual(model: MarketModel, solution, x=None, n: int = 201, fd_step: float = 1e-3) -> float:
    """Scaled sup-norm of ``L h + lambda h`` over probe points.

    ``|1/2 sigma^2 h'' + k h' + (lambda - r) h| / (1 + |h| (1 + |r - lambda|))``.
    ``h''/h`` comes from ``solution.d2_over_h`` when available, otherwise from a
    five-point difference of ``h'/h`` in chart coordinates.
    """
    if x is None:
        x = model.sample_grid(n, depth=0.9 * model.truncation)
    x = np.asarray(x, dtype=float)
    lam = solution.lam
    b, s, r, v = model.coefficients(x)
    k = b - s * v
    psi = np.asarray(solution.dlog_h(x), dtype=float)
    if hasattr(solution, "d2_over_h"):
        second = np.asarray(solution.d2_over_h(x), dtype=float)
    else:
        chart = model.chart
        u = chart.to_u(x)
        d1, _ = chart.derivatives(u)
        vals = [np.asarray(solution.dlog_h(chart.to_x(u + j * fd_step)), dtype=float) for j in (-2, -1, 1, 2)]
        dpsi_du = (vals[0] - 8 * vals[1] + 8 * vals[2] - vals[3]) / (12 * fd_step)
        second = dpsi_du / d1 + psi**2
    with np.errstate(over="ignore", invalid="ignore"):
        hval = np.exp(np.asarray(solution.log_h(x), dtype=float))
        rel = np.abs(0.5 * s * s * second + k * psi + (lam - r))
        # divide through by |h| first so huge h does not overflow
        scaled = rel / (1.0 / np.maximum(hval, 1e-300) + (1.0 + np.abs(r - lam)))
    return float(np.max(scaled))
