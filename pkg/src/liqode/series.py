"""Formal expansion ``f_n(x) = sum_{i<=n} k_i x^(1 + i/2)`` of local solutions.

Coefficients come from a closed recursion (even and odd indices handled
separately).  The recursion sums are convolutions with mixed signs, so they
use compensated summation in double precision.  Passing ``dps`` switches
the whole computation to mpmath at that many decimal digits, which the
order certificate needs: in doubles the rounding in low-order coefficients
swamps ``E f_m`` long before x reaches the bottom of a dyadic grid.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import mpmath
import numpy as np

from .core import ArgumentError, DomainError, ModelParams, Regime

DEFAULT_CAP = 40


@dataclass(frozen=True)
class SeriesCoefficients:
    params: ModelParams
    ks: tuple
    dps: int | None = None

    @property
    def n(self) -> int:
        return len(self.ks) - 1

    def as_floats(self) -> list[float]:
        return [float(k) for k in self.ks]

    def perturbed(self, i: int, delta) -> "SeriesCoefficients":
        ks = list(self.ks)
        ks[i] = ks[i] + delta
        return replace(self, ks=tuple(ks))


def _recursion(a, b, c, n, fsum, sqrt, one):
    k = [one * 0] * (n + 1)
    k[0] = one
    k[1] = -2 * one / 3 * sqrt((a + b) / c)
    k1 = k[1]
    half = one / 2
    for m in range(2, n + 1):
        if m % 2 == 0:
            i = m // 2
            conv = fsum([(3 + j) * (2 + 2 * i - j) * k[j + 1] * k[2 * i - j] for j in range(1, i)])
            lin = 2 * k[2 * i - 1] / c * (a + b + (i - half) * a - (i * i - half * half))
            k[m] = (lin - conv) / (6 * (i + 1) * k1)
        else:
            i = (m - 1) // 2
            conv = fsum([(3 + j) * (3 + 2 * i - j) * k[j + 1] * k[2 * i - j + 1] for j in range(1, i)])
            lin = 2 * k[2 * i] / c * (a + b + i * a - i * (1 + i))
            k[m] = (lin - half * (3 + i) ** 2 * k[i + 1] ** 2 - conv) / (3 * (2 * i + 3) * k1)
    return k


def coefficients(params: ModelParams, n: int, *, dps: int | None = None, cap: int = DEFAULT_CAP) -> SeriesCoefficients:
    """k_0..k_n.  ``dps=None`` means double precision."""
    params.require(Regime.RICH)
    if int(n) != n or n < 1:
        raise ArgumentError(f"n must be an integer >= 1, got {n!r}")
    if dps is None and n > cap:
        raise ArgumentError(f"n={n} exceeds the double-precision cap {cap}; pass dps for longer prefixes")
    if dps is None:
        ks = _recursion(params.a, params.b, params.c, int(n), math.fsum, math.sqrt, 1.0)
        return SeriesCoefficients(params, tuple(ks))
    with mpmath.workdps(dps):
        a, b, c = (mpmath.mpf(v) for v in (params.a, params.b, params.c))
        ks = _recursion(a, b, c, int(n), mpmath.fsum, mpmath.sqrt, mpmath.mpf(1))
    return SeriesCoefficients(params, tuple(ks), dps=dps)


def _terms(ks, m, x, deriv, power, one):
    out = []
    for i in range(m + 1):
        e = 1 + one * i / 2
        if deriv == 0:
            out.append(ks[i] * power(x, e))
        elif deriv == 1:
            out.append(e * ks[i] * power(x, e - 1))
        else:
            out.append(e * (e - 1) * ks[i] * power(x, e - 2))
    return out


def eval_partial(coeffs: SeriesCoefficients, m: int, x, deriv: int = 0):
    """f_m(x) or one of its first two derivatives, termwise."""
    if deriv not in (0, 1, 2):
        raise ArgumentError(f"deriv must be 0, 1 or 2, got {deriv!r}")
    if not 1 <= m <= coeffs.n:
        raise ArgumentError(f"m must lie in [1, {coeffs.n}], got {m!r}")
    if not x > 0:
        raise DomainError(f"x must be > 0, got {x!r}")
    if isinstance(x, mpmath.mpf) or coeffs.dps is not None:
        with mpmath.workdps(coeffs.dps or mpmath.mp.dps):
            return mpmath.fsum(_terms(coeffs.ks, m, mpmath.mpf(x), deriv, mpmath.power, mpmath.mpf(1)))
    return math.fsum(_terms([float(k) for k in coeffs.ks], m, float(x), deriv, math.pow, 1.0))


def _residual_mp(params, ks, m, x):
    f = mpmath.fsum(_terms(ks, m, x, 0, mpmath.power, mpmath.mpf(1)))
    df = mpmath.fsum(_terms(ks, m, x, 1, mpmath.power, mpmath.mpf(1)))
    ddf = mpmath.fsum(_terms(ks, m, x, 2, mpmath.power, mpmath.mpf(1)))
    a, b, c = (mpmath.mpf(v) for v in (params.a, params.b, params.c))
    return -x * x * ddf + a * x * df + b * f - c * (df - 1) ** 2


@dataclass
class OrderReport:
    m: int
    xs: list[float]
    ratios: list[float]
    sup: float
    growth_exponent: float
    bounded: bool

    def as_dict(self):
        return {
            "m": self.m,
            "xs": self.xs,
            "ratios": self.ratios,
            "sup": self.sup,
            "growth_exponent": self.growth_exponent,
            "bounded": self.bounded,
        }


def residual_order(coeffs: SeriesCoefficients, m: int, xs, *, dps: int = 80,
                   growth_limit: float = 0.25) -> OrderReport:
    """Ratios |E f_m(x)| / x^((m+2)/2) along a decreasing grid.

    E f_m is evaluated in mpmath so the cancellation between its terms is
    exact relative to the supplied coefficients.  ``growth_exponent`` is the
    fitted g in ratio ~ x^(-g) over the finer half of the grid; a ratio that
    stays bounded has g close to 0, a broken coefficient gives g >= 1/2.
    """
    xs = [float(x) for x in xs]
    if not xs:
        raise ArgumentError("empty grid")
    if not 1 <= m <= coeffs.n:
        raise ArgumentError(f"m must lie in [1, {coeffs.n}], got {m!r}")
    if any(not (0 < x <= 1) for x in xs):
        raise ArgumentError("grid must lie in (0, 1]")
    if any(x2 >= x1 for x1, x2 in zip(xs[:-1], xs[1:])):
        raise ArgumentError("grid must be strictly decreasing")
    ratios = []
    with mpmath.workdps(max(dps, coeffs.dps or 0)):
        ks = [mpmath.mpf(k) for k in coeffs.ks]
        for x in xs:
            xm = mpmath.mpf(x)
            e = _residual_mp(coeffs.params, ks, m, xm)
            ratios.append(float(abs(e) / xm ** (mpmath.mpf(m + 2) / 2)))
    tail = max(2, len(xs) // 2)
    lx = np.log(np.asarray(xs[-tail:]))
    lr = np.log(np.maximum(np.asarray(ratios[-tail:]), 1e-300))
    if len(lx) >= 2 and np.ptp(lx) > 0:
        g = float(-np.polyfit(lx, lr, 1)[0])
    else:
        g = 0.0
    return OrderReport(m, xs, ratios, max(ratios), g, g < growth_limit)


def dyadic_grid(j_lo: int, j_hi: int) -> list[float]:
    return [2.0 ** -j for j in range(j_lo, j_hi + 1)]


def _neville_at_zero(s, vals):
    p = list(vals)
    n = len(p)
    for lev in range(1, n):
        for i in range(n - lev):
            p[i] = (s[i] * p[i + 1] - s[i + lev] * p[i]) / (s[i] - s[i + lev])
    return p[0]


def limit_coefficients(params: ModelParams, m_max: int, *, j_lo: int = 10, j_hi: int = 24,
                       dps: int = 150) -> list:
    """Coefficients built from the limit of E f_n alone, without the recursion.

    k_{n+1} = lim_{x->0} 2 E f_n(x) / (3 c k_1 (n+3) x^((n+2)/2)); the limit is
    taken by polynomial extrapolation in sqrt(x) over x = 2^-j.  Returns
    k_0..k_{m_max+1} as mpmath numbers.
    """
    params.require(Regime.RICH)
    with mpmath.workdps(dps):
        a, b, c = (mpmath.mpf(v) for v in (params.a, params.b, params.c))
        ks = [mpmath.mpf(1), -mpmath.mpf(2) / 3 * mpmath.sqrt((a + b) / c)]
        xs = [mpmath.mpf(2) ** -j for j in range(j_lo, j_hi + 1)]
        ss = [mpmath.sqrt(x) for x in xs]
        for n in range(1, m_max + 1):
            vals = [
                2 * _residual_mp(params, ks, n, x) / (3 * c * ks[1] * (n + 3) * x ** (mpmath.mpf(n + 2) / 2))
                for x in xs
            ]
            ks.append(_neville_at_zero(ss, vals))
    return ks


@dataclass
class DivergenceReport:
    n: int
    positive: bool
    first_nonpositive: int | None
    ratios: list[float]
    bounds: list[float]
    bound_holds: list[bool]
    ratio_slope: float
    zero_radius: bool
    positivity_window: bool
    notes: list[str] = field(default_factory=list)

    def bound_holds_from(self, i0: int) -> bool:
        return all(ok for i, ok in enumerate(self.bound_holds, start=1) if i >= i0)

    def as_dict(self):
        return {
            "n": self.n,
            "positive": self.positive,
            "first_nonpositive": self.first_nonpositive,
            "ratios": self.ratios,
            "bounds": self.bounds,
            "bound_holds": self.bound_holds,
            "ratio_slope": self.ratio_slope,
            "zero_radius": self.zero_radius,
            "positivity_window": self.positivity_window,
            "notes": self.notes,
        }


def divergence_report(coeffs: SeriesCoefficients) -> DivergenceReport:
    """Sign pattern and growth of k_{i+1}/k_i.

    ``ratios[i-1]`` is k_{i+1}/k_i and ``bounds[i-1]`` is -2(i-1)/(3 k_1 c);
    both indexed from i = 1.
    """
    if coeffs.n < 5:
        raise ArgumentError(f"need at least 5 coefficients beyond k_0, got n={coeffs.n}")
    p = coeffs.params
    ks = coeffs.as_floats()
    k1 = ks[1]
    first_bad = next((i for i in range(2, len(ks)) if not ks[i] > 0), None)
    ratios, bounds, holds = [], [], []
    notes = []
    for i in range(1, coeffs.n):
        if ks[i] == 0.0:
            ratios.append(math.nan)
            notes.append(f"k_{i} is exactly zero; ratio undefined")
        else:
            ratios.append(ks[i + 1] / ks[i])
        bounds.append(-2.0 * (i - 1) / (3.0 * k1 * p.c))
        holds.append(bool(ratios[-1] >= bounds[-1]))
    idx = np.arange(1, coeffs.n)
    r = np.asarray(ratios)
    half = idx >= max(2, coeffs.n // 2)
    ok = half & np.isfinite(r)
    slope = float(np.polyfit(idx[ok], np.abs(r[ok]), 1)[0]) if ok.sum() >= 2 else math.nan
    rabs = np.abs(r[np.isfinite(r)])
    zero_radius = bool(slope > 0 and rabs.size >= 4 and rabs[-1] > 1.5 * rabs[rabs.size // 2])
    window = p.a < 1.5 and -p.a < p.b <= 0.75 - 1.5 * p.a
    return DivergenceReport(coeffs.n, first_bad is None, first_bad, ratios, bounds, holds, slope,
                            zero_radius, bool(window), notes)


def write_csv(coeffs: SeriesCoefficients, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["i", "k_i"])
        for i, k in enumerate(coeffs.ks):
            w.writerow([i, format(float(k), ".17g")])
