"""Monte Carlo paths of the state under the pricing measure or a recovered measure.

Paths are stepped with Euler-Maruyama in chart coordinates, so the state
never leaves its domain.  Every path draws its normals from its own Philox
stream keyed by ``(seed, path index)``, which makes results independent of
block size and worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import PchipInterpolator

from .model import MarketModel
from .odesolve import solve

__all__ = [
    "SimulationResult",
    "SimulationError",
    "MartingaleCheck",
    "simulate",
    "martingale_mc_check",
    "exceedance_trend",
]

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)
GRID_POINTS = 4001


class SimulationError(RuntimeError):
    pass


def path_normals(seed: int, path: int, n_steps: int) -> np.ndarray:
    """Standard normals for one path; the same for any batching of paths."""
    key = (int(seed) << 64) | int(path)
    return np.random.Generator(np.random.Philox(key=key)).standard_normal(n_steps)


class _LogInterp:
    """``log h`` and ``d log h / du`` as monotone cubic interpolants on the chart."""

    def __init__(self, model: MarketModel, solution, n: int = GRID_POINTS):
        chart = model.chart
        u_lo, u_hi = model.u_window()
        u = np.linspace(u_lo, u_hi, n)
        x = chart.to_x(u)
        d1, _ = chart.derivatives(u)
        self.u_lo, self.u_hi = u_lo, u_hi
        self.log_h = PchipInterpolator(u, np.asarray(solution.log_h(x), dtype=float), extrapolate=False)
        self.w = PchipInterpolator(u, np.asarray(solution.dlog_h(x), dtype=float) * d1, extrapolate=False)
        self.lam = float(solution.lam)


@dataclass(frozen=True)
class SimulationResult:
    measure: str
    n_paths: int
    n_steps: int
    horizon: float
    seed: int
    terminal_mean: float
    terminal_quantiles: dict
    exceedance: dict
    martingale_estimate: tuple | None = None
    lam: float | None = None
    clipped_paths: int = 0
    terminal: np.ndarray = field(default=None, repr=False, compare=False)
    weights: np.ndarray = field(default=None, repr=False, compare=False)

    def to_dict(self) -> dict:
        out = {
            "measure": self.measure,
            "n_paths": self.n_paths,
            "n_steps": self.n_steps,
            "horizon": self.horizon,
            "seed": self.seed,
            "lambda": self.lam,
            "terminal_states": {"mean": self.terminal_mean, "quantiles": {str(q): v for q, v in self.terminal_quantiles.items()}},
            "exceedance": {repr(float(t)): f for t, f in self.exceedance.items()},
            "clipped_paths": self.clipped_paths,
        }
        if self.martingale_estimate is not None:
            mean, se = self.martingale_estimate
            out["martingale_estimate"] = {"mean": mean, "stderr": se}
        return out


def _block(model, interp, measure, horizon, n_steps, seed, start, stop):
    chart = model.chart
    dt = horizon / n_steps
    sq = math.sqrt(dt)
    z = np.stack([path_normals(seed, p, n_steps) for p in range(start, stop)])
    n = stop - start
    u = np.full(n, model.u_xi)
    log_g = np.zeros(n)
    clipped = np.zeros(n, dtype=bool)
    for i in range(n_steps):
        x = chart.to_x(u)
        b, s, r, v = model.coefficients(x)
        d1, d2 = chart.derivatives(u)
        if measure == "P":
            inside = (u >= interp.u_lo) & (u <= interp.u_hi)
            clipped |= ~inside
            w = interp.w(np.clip(u, interp.u_lo, interp.u_hi))
            mu = b - s * v + s * s * w / d1
        else:
            mu = b
        dw = sq * z[:, i]
        log_g += (r + 0.5 * v * v) * dt + v * dw
        u = u + (mu / d1 - 0.5 * s * s * d2 / d1**3) * dt + (s / d1) * dw
        if not np.all(np.isfinite(u)):
            bad = int(np.flatnonzero(~np.isfinite(u))[0]) + start
            raise SimulationError(f"non-finite state on path {bad} at step {i + 1}")
    return u, log_g, clipped


def simulate(
    model: MarketModel,
    measure: str = "Q",
    horizon: float = 1.0,
    n_paths: int = 10_000,
    n_steps: int = 1000,
    seed: int = 0,
    solution=None,
    thresholds=(),
    block: int = 4096,
    workers: int = 1,
) -> SimulationResult:
    """Simulate ``X_T`` under ``Q`` or under the measure induced by ``solution``.

    With a solution under ``Q`` the result also carries the sample mean and
    standard error of ``e^{lambda T} h(X_T) / G_T``.
    """
    measure = measure.upper()
    if measure not in ("Q", "P"):
        raise ValueError("measure must be 'Q' or 'P'")
    if measure == "P" and solution is None:
        raise ValueError("simulating under P needs a solution or recovered agent")
    if n_steps < 100:
        raise ValueError("n_steps must be at least 100")
    if n_paths < 2:
        raise ValueError("need at least two paths")
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    sol = getattr(solution, "solution", solution)
    interp = _LogInterp(model, sol) if sol is not None else None

    if horizon == 0:
        u = np.full(n_paths, model.u_xi)
        log_g = np.zeros(n_paths)
        clipped = np.zeros(n_paths, dtype=bool)
    else:
        bounds = [(a, min(a + block, n_paths)) for a in range(0, n_paths, block)]

        def run(ab):
            return _block(model, interp, measure, float(horizon), n_steps, seed, *ab)

        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                parts = list(pool.map(run, bounds))
        else:
            parts = [run(ab) for ab in bounds]
        u = np.concatenate([p[0] for p in parts])
        log_g = np.concatenate([p[1] for p in parts])
        clipped = np.concatenate([p[2] for p in parts])

    x_t = model.chart.to_x(u)
    weights = None
    estimate = None
    lam = None
    if interp is not None:
        lam = interp.lam
        uc = np.clip(u, interp.u_lo, interp.u_hi)
        clipped |= uc != u
        if horizon == 0:
            weights = np.ones(n_paths)
        else:
            weights = np.exp(lam * horizon + interp.log_h(uc) - log_g)
        if measure == "Q":
            mean = math.fsum(weights) / n_paths
            var = math.fsum((weights - mean) ** 2) / (n_paths - 1)
            estimate = (mean, math.sqrt(var / n_paths))
    exceed = {float(t): float(np.count_nonzero(x_t > t)) / n_paths for t in thresholds}
    quant = {q: float(v) for q, v in zip(QUANTILES, np.quantile(x_t, QUANTILES))}
    return SimulationResult(
        measure=measure,
        n_paths=int(n_paths),
        n_steps=int(n_steps),
        horizon=float(horizon),
        seed=int(seed),
        terminal_mean=math.fsum(x_t) / n_paths,
        terminal_quantiles=quant,
        exceedance=exceed,
        martingale_estimate=estimate,
        lam=lam,
        clipped_paths=int(np.count_nonzero(clipped)),
        terminal=x_t,
        weights=weights,
    )


@dataclass(frozen=True)
class MartingaleCheck:
    estimate: float
    stderr: float
    passed: bool

    def to_dict(self) -> dict:
        return {"estimate": self.estimate, "stderr": self.stderr, "pass": self.passed}


def martingale_mc_check(
    model: MarketModel,
    lam: float,
    horizon: float = 1.0,
    n_paths: int = 100_000,
    seed: int = 0,
    n_steps: int = 1000,
    solution=None,
    workers: int = 1,
) -> MartingaleCheck:
    """Is ``E[e^{lambda T} h(X_T)/G_T] = 1`` within three standard errors?"""
    solution = solution or solve(model, lam, "M")
    if horizon == 0:
        return MartingaleCheck(1.0, 0.0, True)
    res = simulate(model, "Q", horizon, n_paths, n_steps, seed, solution=solution, workers=workers)
    mean, se = res.martingale_estimate
    return MartingaleCheck(mean, se, abs(mean - 1.0) <= 3.0 * se)


def exceedance_trend(
    model: MarketModel,
    solution,
    horizons=(1.0, 5.0, 25.0),
    threshold: float | None = None,
    n_paths: int = 10_000,
    steps_per_unit: int = 100,
    seed: int = 0,
) -> tuple:
    """Fraction of paths above ``threshold`` (default ``xi``) under the recovered measure, per horizon."""
    threshold = model.xi if threshold is None else threshold
    out = []
    for t in horizons:
        n_steps = max(100, int(round(steps_per_unit * t)))
        res = simulate(model, "P", t, n_paths, n_steps, seed, solution=solution, thresholds=(threshold,))
        out.append(res.exceedance[float(threshold)])
    return tuple(out)
