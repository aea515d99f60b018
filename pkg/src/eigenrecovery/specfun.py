"""Kummer's confluent hypergeometric function M(a, b, z) and log-Gamma.

All routines are scalar and pure.  ``log_kummer_m`` is the workhorse; it
returns ``(log|M|, sign)`` so large arguments never overflow.
"""

from __future__ import annotations

import math

import mpmath
import numpy as np

__all__ = [
    "SpecialFunctionError",
    "ParameterPoleError",
    "log_gamma",
    "log_gamma_signed",
    "reciprocal_gamma",
    "kummer_m",
    "kummer_m_prime",
    "log_kummer_m",
]

SERIES_LIMIT = 35.0
_MAX_TERMS = 100_000
_LOG_MAX = math.log(np.finfo(float).max)

# Lanczos approximation, g = 7, n = 9
_LANCZOS_G = 7.0
_LANCZOS_C = (
    0.99999999999980993,
    676.5203681218851,
    -1259.1392167224028,
    771.32342877765313,
    -176.61502916214059,
    12.507343278686905,
    -0.13857109526572012,
    9.9843695780195716e-6,
    1.5056327351493116e-7,
)
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


class SpecialFunctionError(ArithmeticError):
    pass


class ParameterPoleError(SpecialFunctionError):
    pass


def _is_nonpos_int(v: float) -> bool:
    return v <= 0 and float(v).is_integer()


def log_gamma(x: float) -> float:
    """Natural log of Gamma(x) for x > 0."""
    x = float(x)
    if not x > 0 or not math.isfinite(x):
        raise SpecialFunctionError(f"log_gamma requires a positive finite argument, got {x!r}")
    if x < 0.5:
        # shift up so the rational part stays well conditioned
        return log_gamma(x + 1.0) - math.log(x)
    if x == 1.0 or x == 2.0:
        return 0.0
    y = x - 1.0
    acc = _LANCZOS_C[0]
    for i in range(1, len(_LANCZOS_C)):
        acc += _LANCZOS_C[i] / (y + i)
    t = y + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (y + 0.5) * math.log(t) - t + math.log(acc)


def log_gamma_signed(x: float) -> tuple[float, int]:
    """``(log|Gamma(x)|, sign Gamma(x))`` for any x that is not a pole."""
    x = float(x)
    if x > 0:
        return log_gamma(x), 1
    if _is_nonpos_int(x):
        raise ParameterPoleError(f"Gamma has a pole at {x!r}")
    s = math.sin(math.pi * x)
    return math.log(math.pi) - math.log(abs(s)) - log_gamma(1.0 - x), (1 if s > 0 else -1)


def reciprocal_gamma(x: float) -> float:
    """1/Gamma(x), equal to zero at the poles 0, -1, -2, ..."""
    if _is_nonpos_int(x):
        return 0.0
    lg, sg = log_gamma_signed(x)
    return sg * math.exp(-lg)


# --------------------------------------------------------------------------- #
# Kummer M
# --------------------------------------------------------------------------- #


def _check_b(b: float) -> None:
    if _is_nonpos_int(b):
        raise ParameterPoleError(f"Kummer M undefined for b = {b!r} (non-positive integer)")


def _direct_series(a: float, b: float, z: float) -> float:
    """Plain Taylor series, compensated summation.

    When cancellation between terms would eat more than ~5 digits the sum is
    redone in extended precision.
    """
    terms = [1.0]
    t = 1.0
    n = 0
    floor = max(0.0, -a) + 2
    while True:
        t *= (a + n) / (b + n) * z / (n + 1)
        n += 1
        terms.append(t)
        if t == 0.0:
            break
        if abs(t) > 1e300:
            raise OverflowError(f"Kummer series overflow for a={a}, b={b}, z={z}")
        if n > floor and abs(t) < 1e-17 * abs(math.fsum(terms)):
            break
        if n > _MAX_TERMS:
            raise SpecialFunctionError(f"Kummer series did not converge for a={a}, b={b}, z={z}")
    total = math.fsum(terms)
    if max(abs(t) for t in terms) > 1e5 * abs(total):
        with mpmath.workdps(40):
            return float(mpmath.hyp1f1(a, b, z))
    return total


def _log_series(a: float, b: float, z: float) -> tuple[float, int]:
    """Taylor series summed in log space (z > 0)."""
    n_terms = int(z + 60 + 12 * math.sqrt(z) + abs(a) + abs(b))
    if n_terms > _MAX_TERMS:
        raise SpecialFunctionError(f"Kummer series too long for a={a}, b={b}, z={z}")
    k = np.arange(n_terms, dtype=float)
    num = a + k
    with np.errstate(divide="ignore"):
        steps = np.log(np.abs(num)) - np.log(np.abs(b + k)) + math.log(z) - np.log(k + 1)
    signs = np.sign(num) * np.sign(b + k)
    logt = np.concatenate(([0.0], np.cumsum(steps)))
    sgn = np.concatenate(([1.0], np.cumprod(signs)))
    keep = np.isfinite(logt) & (sgn != 0)
    logt, sgn = logt[keep], sgn[keep]
    top = logt.max()
    w = np.exp(logt - top)
    pos = math.fsum(w[sgn > 0])
    neg = math.fsum(w[sgn < 0])
    total = pos - neg
    if total == 0.0:
        return -math.inf, 0
    return top + math.log(abs(total)), (1 if total > 0 else -1)


def _log_asymptotic(a: float, b: float, z: float):
    """Large-z expansion ``Gamma(b)/Gamma(a) e^z z^(a-b) sum_n (b-a)_n (1-a)_n / (n! z^n)``.

    Returns None when the expansion cannot reach double precision at this z.
    """
    if _is_nonpos_int(a):
        return None
    lga, sga = log_gamma_signed(a)
    lgb, sgb = log_gamma_signed(b)
    # size of the recessive companion term relative to the leading one
    if not _is_nonpos_int(b - a):
        lgba, _ = log_gamma_signed(b - a)
        companion = lga - lgba - z + (b - 2 * a) * math.log(z)
        if companion > math.log(1e-17):
            return None
    terms = [1.0]
    t = 1.0
    n = 0
    while True:
        nxt = t * (b - a + n) * (1 - a + n) / ((n + 1) * z)
        n += 1
        if abs(nxt) >= abs(t) and n > 1:
            return None
        t = nxt
        terms.append(t)
        if abs(t) < 1e-17 * abs(math.fsum(terms)):
            break
        if n > 200:
            return None
    s = math.fsum(terms)
    if s <= 0:
        return None
    return lgb - lga + z + (a - b) * math.log(z) + math.log(s), sga * sgb


def log_kummer_m(a: float, b: float, z: float) -> tuple[float, int]:
    """``(log|M(a,b,z)|, sign)``; never overflows."""
    a, b, z = float(a), float(b), float(z)
    _check_b(b)
    if z == 0.0 or a == 0.0:
        return 0.0, 1
    if _is_nonpos_int(a):
        v = _direct_series(a, b, z) if abs(z) < 50 else None
        if v is None:
            return _log_series(a, b, z) if z > 0 else _log_series_negative(a, b, z)
        return (math.log(abs(v)), 1 if v > 0 else -1) if v != 0 else (-math.inf, 0)
    if z < 0:
        lm, sg = log_kummer_m(b - a, b, -z)
        return lm + z, sg
    if z <= SERIES_LIMIT:
        v = _direct_series(a, b, z)
        if v == 0:
            return -math.inf, 0
        return math.log(abs(v)), (1 if v > 0 else -1)
    asym = _log_asymptotic(a, b, z)
    if asym is not None:
        return asym
    return _log_series(a, b, z)


def _log_series_negative(a: float, b: float, z: float) -> tuple[float, int]:
    # terminating polynomial at large negative z: exact-rational coefficients are
    # not available, so sum the finite series with fsum after scaling
    n_max = int(-a)
    k = np.arange(n_max, dtype=float)
    logt = np.concatenate(
        ([0.0], np.cumsum(np.log(np.abs(a + k)) - np.log(np.abs(b + k)) + math.log(-z) - np.log(k + 1)))
    )
    sgn = np.concatenate(([1.0], np.cumprod(np.sign(a + k) * np.sign(b + k) * -1.0)))
    top = logt.max()
    total = math.fsum(sgn * np.exp(logt - top))
    if total == 0:
        return -math.inf, 0
    return top + math.log(abs(total)), (1 if total > 0 else -1)


def kummer_m(a: float, b: float, z: float) -> float:
    """Kummer's function M(a, b, z) = 1F1(a; b; z)."""
    lm, sg = log_kummer_m(a, b, z)
    if lm > _LOG_MAX:
        raise OverflowError(f"M({a}, {b}, {z}) exceeds the double range; use log_kummer_m")
    return sg * math.exp(lm)


def kummer_m_prime(a: float, b: float, z: float) -> float:
    """dM/dz = (a/b) M(a+1, b+1, z)."""
    _check_b(b)
    if a == 0.0:
        return 0.0
    return (a / b) * kummer_m(a + 1.0, b + 1.0, z)
