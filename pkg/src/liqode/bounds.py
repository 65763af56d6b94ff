"""Sub- and supersolutions.

Besides the trivial pair 0 <= u <= x, a solution u is bracketed near 0 by

    v(x) = u(x) - eps * x^alpha * exp(-beta / sqrt(x)),   beta = 4 c k,

which is a subsolution for alpha below 3/2 + a - 2cl and a supersolution for
alpha above 3/2 + a + 2cl, where l bounds |(u'-1)/sqrt(x) + k| / sqrt(x).

E v - E u is exponentially small, far below the rounding noise of a direct
evaluation once x is small, so sign checks work with the bracket
E v / (eps * exp(-beta/sqrt(x)) * x^(alpha-1/2)) assembled from the
expanded form.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .core import LiqodeError, ModelParams, Regime, StatePoint, ode_ddu, residual
from .solver import GridSolution


class CoverageError(LiqodeError):
    pass


class EnvelopeInvalidError(LiqodeError):
    pass


class FormulaConsistencyError(LiqodeError):
    pass


@dataclass(frozen=True)
class TrivialEnvelope:
    params: ModelParams
    residual_lower: float  # E 0 = -c
    residual_upper_slope: float  # E x = (a+b) x

    def lower(self, x):
        return np.zeros_like(np.asarray(x, dtype=float))

    def upper(self, x):
        return np.asarray(x, dtype=float)

    def residual_upper(self, x):
        return self.residual_upper_slope * np.asarray(x, dtype=float)


def trivial_envelope(params: ModelParams) -> TrivialEnvelope:
    params.require(Regime.RICH)
    return TrivialEnvelope(params, -params.c, params.a + params.b)


@dataclass
class LEstimate:
    l: float
    sup: float
    x_at_sup: float
    decade_sups: list
    growing: bool

    def as_dict(self):
        return {"l": self.l, "sup": self.sup, "x_at_sup": self.x_at_sup, "decade_sups": self.decade_sups,
                "growing": self.growing}


def _l_ratio(sol: GridSolution, k: float) -> np.ndarray:
    sq = np.sqrt(sol.xs)
    return np.abs((sol.du - 1.0 + k * sq) / sq) / sq


def estimate_l(sol: GridSolution, *, x_hi: float | None = None, safety: float = 1.5,
               x_cover: float = 1e-4) -> LEstimate:
    """1.5 x sup |(u'-1)/sqrt(x) + k| / sqrt(x) over the trace.

    ``growing`` is set when the sup taken over successive decades keeps
    increasing toward the smallest x, i.e. the estimate does not settle as
    the grid reaches 0.
    """
    p = sol.params
    p.require(Regime.RICH, Regime.LINEAR_EXACT)
    if sol.x_min > x_cover:
        raise CoverageError(f"trace starts at x={sol.x_min:g}; need x_min <= {x_cover:g}")
    s = sol if x_hi is None else sol.restrict(sol.x_min, x_hi)
    q = _l_ratio(s, p.k)
    i = int(np.argmax(q))
    decades = []
    lo = s.x_min
    while lo < s.x_max:
        m = (s.xs >= lo) & (s.xs < lo * 10)
        if m.any():
            decades.append((float(lo), float(q[m].max())))
        lo *= 10
    sups = [d[1] for d in decades[:4]]
    growing = len(sups) >= 3 and all(a > b for a, b in zip(sups, sups[1:])) and sups[0] > 2 * sups[2]
    return LEstimate(safety * float(q[i]), float(q[i]), float(s.xs[i]), decades, bool(growing))


def thresholds(params: ModelParams, l: float) -> tuple[float, float]:
    """(3/2 + a - 2cl, 3/2 + a + 2cl)."""
    return 1.5 + params.a - 2 * params.c * l, 1.5 + params.a + 2 * params.c * l


@dataclass(frozen=True)
class EnvelopeSpec:
    anchor: GridSolution = field(repr=False)
    eps: float
    alpha: float
    beta: float
    side: str
    l: float
    x_valid: float

    def __post_init__(self):
        p = self.anchor.params
        if self.side not in ("sub", "super"):
            raise ValueError("side must be 'sub' or 'super'")
        if not 0 < self.eps <= 1:
            raise ValueError("eps must lie in (0, 1]")
        if self.beta != 4 * p.c * p.k:
            raise ValueError("beta must equal 4 c k")
        lo, hi = thresholds(p, self.l)
        if self.side == "sub" and not self.alpha < lo:
            raise ValueError(f"a subsolution needs alpha < {lo}")
        if self.side == "super" and not self.alpha > hi:
            raise ValueError(f"a supersolution needs alpha > {hi}")

    def value(self, x):
        x = np.asarray(x, dtype=float)
        return self.anchor(x, 0) - self.eps * x ** self.alpha * np.exp(-self.beta / np.sqrt(x))


def make_envelope(anchor: GridSolution, side: str, l: float, *, eps: float = 1.0, alpha: float | None = None,
                  x_valid: float | None = None) -> EnvelopeSpec:
    """Envelope with the default unit margin from the relevant alpha threshold."""
    p = anchor.params
    p.require(Regime.RICH)
    lo, hi = thresholds(p, l)
    if alpha is None:
        alpha = lo - 1.0 if side == "sub" else hi + 1.0
    return EnvelopeSpec(anchor, eps, alpha, 4 * p.c * p.k, side, l,
                        anchor.x_max if x_valid is None else x_valid)


def _w_derivs(x, alpha, beta, eps):
    g = eps * x ** alpha * math.exp(-beta / math.sqrt(x))
    r = alpha / x + beta / (2 * x ** 1.5)
    dg = g * r
    ddg = g * (r * r - alpha / x ** 2 - 0.75 * beta / x ** 2.5)
    return g, dg, ddg


def perturbation_pair(anchor: GridSolution, alpha: float, beta: float, eps: float, x: float):
    """(direct, expanded, noise) for E v with v = u - eps x^alpha e^(-beta/sqrt x).

    ``direct`` evaluates the residual of v itself; ``expanded`` sums the
    five bracketed contributions of the perturbation; ``noise`` estimates
    the rounding error of ``direct`` from the size of its terms.
    """
    p = anchor.params
    u, du = float(anchor(x, 0)), float(anchor(x, 1))
    ddu = float(ode_ddu(p, x, u, du))
    g, dg, ddg = _w_derivs(x, alpha, beta, eps)
    v, dv, ddv = u - g, du - dg, ddu - ddg
    direct = residual(p, StatePoint(x, v, dv, ddv))
    noise = 8 * np.finfo(float).eps * (x * x * abs(ddv) + abs(p.a * x * dv) + abs(p.b * v) + p.c * (dv - 1) ** 2
                                       + x * x * abs(ddu) + abs(p.a * x * du) + abs(p.b * u))
    phi = (du - 1.0) / math.sqrt(x)
    e = eps * math.exp(-beta / math.sqrt(x))
    terms = [
        beta * beta / 4 * x ** (alpha - 1),
        ((alpha - 1.5) * beta / 2 + alpha * beta / 2 - p.a * beta / 2) * x ** (alpha - 0.5),
        (alpha * (alpha - 1) - p.a * alpha - p.b) * x ** alpha,
        2 * p.c * phi * (beta / 2 * x ** (alpha - 1) + alpha * x ** (alpha - 0.5)),
        -eps * p.c * (beta / 2 * x ** (alpha - 1.5) + alpha * x ** (alpha - 1)) ** 2 * math.exp(-beta / math.sqrt(x)),
    ]
    expanded = e * math.fsum(terms)
    return direct, expanded, float(noise)


def perturbation_residual(env: EnvelopeSpec, x: float, *, rtol: float = 1e-9) -> float:
    """E v at x.

    When the direct evaluation is resolved above its rounding noise the two
    routes must agree to ``rtol`` and the direct value is returned; otherwise
    the expanded value is returned.
    """
    if not 0 < x < env.x_valid * (1 + 1e-12):
        raise ValueError(f"x={x!r} outside (0, {env.x_valid})")
    direct, expanded, noise = perturbation_pair(env.anchor, env.alpha, env.beta, env.eps, x)
    if noise <= 0.1 * rtol * abs(expanded):
        if abs(direct - expanded) > rtol * abs(expanded):
            raise FormulaConsistencyError(f"direct {direct!r} vs expanded {expanded!r} at x={x!r}")
        return direct
    return expanded


def scaled_bracket(env: EnvelopeSpec, xs) -> np.ndarray:
    """E v / (eps e^(-beta/sqrt x) x^(alpha-1/2)); same sign as E v, no underflow."""
    p = env.anchor.params
    xs = np.asarray(xs, dtype=float)
    du = env.anchor(xs, 1)
    sq = np.sqrt(xs)
    kk = p.k
    phi_plus_k = (du - 1.0 + kk * sq) / sq
    phi = phi_plus_k - kk
    al, be = env.alpha, env.beta
    lead = be / 4 * ((be - 4 * p.c * kk) + 4 * p.c * phi_plus_k) / sq
    mid = (al - 1.5) * be / 2 + al * be / 2 - p.a * be / 2 + 2 * p.c * phi * al
    low = (al * (al - 1) - p.a * al - p.b) * sq
    with np.errstate(over="ignore", under="ignore"):
        quad = -env.eps * p.c * xs ** (al - 2.5) * (be / 2 + al * sq) ** 2 * np.exp(-be / sq)
    return lead + mid + low + quad


@dataclass
class SignReport:
    side: str
    x_hat: float
    x_hat_refined: float
    min_abs: float
    n_prefix: int
    n_violations: int
    stable_under_refinement: bool

    def as_dict(self):
        return {
            "side": self.side,
            "x_hat": self.x_hat,
            "x_hat_refined": self.x_hat_refined,
            "min_abs": self.min_abs,
            "n_prefix": self.n_prefix,
            "n_violations": self.n_violations,
            "stable_under_refinement": self.stable_under_refinement,
        }


def _prefix(env, xs, want):
    s = np.sign(scaled_bracket(env, xs))
    bad = np.nonzero(s != want)[0]
    n = int(bad[0]) if bad.size else xs.size
    return n, s


def verify_envelope(env: EnvelopeSpec, grid) -> tuple[SignReport, EnvelopeSpec]:
    """Largest grid prefix (0, x_hat] on which E v has the side's sign, then
    the same on a grid refined 2x; the smaller x_hat becomes the new x_valid."""
    xs = np.sort(np.asarray(grid, dtype=float))
    if xs.size < 2 or xs[0] <= 0 or xs[-1] > env.x_valid * (1 + 1e-12):
        raise ValueError("grid must lie in (0, x_valid]")
    want = -1 if env.side == "sub" else 1
    n, s = _prefix(env, xs, want)
    if n == 0:
        raise EnvelopeInvalidError(f"{env.side} envelope has the wrong sign at the first grid point")
    fine = np.sort(np.concatenate([xs, np.sqrt(xs[1:] * xs[:-1])]))
    nf, _ = _prefix(env, fine, want)
    x_hat = float(xs[n - 1])
    x_hat_f = float(fine[nf - 1]) if nf else 0.0
    vals = np.abs(scaled_bracket(env, xs[:n]))
    rep = SignReport(env.side, x_hat, x_hat_f, float(vals.min()), n, int(np.sum(s[n:] != want)),
                     bool(nf > 0 and x_hat_f >= x_hat * (1 - 1e-12) or nf == fine.size))
    return rep, replace(env, x_valid=min(x_hat, x_hat_f) if nf else x_hat)


def write_envelope_csv(anchor: GridSolution, sub: EnvelopeSpec, sup: EnvelopeSpec, path, xs=None) -> None:
    if xs is None:
        hi = min(sub.x_valid, sup.x_valid)
        xs = anchor.xs[anchor.xs <= hi]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "u", "sub", "super"])
        for x, u, lo, hi in zip(xs, anchor(xs, 0), sub.value(xs), sup.value(xs)):
            w.writerow([format(float(v), ".17g") for v in (x, u, lo, hi)])
