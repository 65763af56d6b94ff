"""Integration, local (epsilon-regularised) solves, the global shooting solver
and the nonexistence probe.

Conventions: ``tol`` is the relative integrator tolerance; the absolute one is
``1e-3 * tol``.  Below ``x_switch`` the system is stepped in x, above it in
t = ln x where the coefficients stay bounded.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from . import kernels as K
from .core import (
    ArgumentError,
    BlowUpError,
    BracketError,
    ConvergenceError,
    DomainError,
    LiqodeError,
    ModelParams,
    NumericError,
    PrecisionError,
    Regime,
    RegimeError,
    StatePoint,
    ode_dddu,
    ode_ddu,
)
from .series import coefficients, eval_partial

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
X_SWITCH = 10.0
_CHUNK = 1 << 16


class InconclusiveShotError(LiqodeError):
    pass


# ---------------------------------------------------------------------------
# traces
# ---------------------------------------------------------------------------

# quintic Hermite basis on [0, 1]: value/slope/curvature at both ends
_H5 = np.array([
    [1, 0, 0, -10, 15, -6],
    [0, 1, 0, -6, 8, -3],
    [0, 0, 0.5, -1.5, 1.5, -0.5],
    [0, 0, 0, 10, -15, 6],
    [0, 0, 0, -4, 7, -3],
    [0, 0, 0, 0.5, -1, 0.5],
])


def _basis(t, deriv):
    coef = _H5
    for _ in range(deriv):
        coef = coef[:, 1:] * np.arange(1, coef.shape[1])
    powers = t[None, :] ** np.arange(coef.shape[1])[:, None]
    return coef @ powers


def _hermite(xs, f, df, ddf, x, deriv):
    i = np.clip(np.searchsorted(xs, x, side="right") - 1, 0, len(xs) - 2)
    h = xs[i + 1] - xs[i]
    t = (x - xs[i]) / h
    B = _basis(t, deriv)
    v = (B[0] * f[i] + B[1] * h * df[i] + B[2] * h * h * ddf[i]
         + B[3] * f[i + 1] + B[4] * h * df[i + 1] + B[5] * h * h * ddf[i + 1])
    return v / h ** deriv


@dataclass
class GridSolution:
    xs: np.ndarray
    u: np.ndarray
    du: np.ndarray
    params: ModelParams
    method: str
    tol: float
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.xs = np.asarray(self.xs, dtype=float)
        self.u = np.asarray(self.u, dtype=float)
        self.du = np.asarray(self.du, dtype=float)
        if not (self.xs.shape == self.u.shape == self.du.shape) or self.xs.ndim != 1:
            raise ArgumentError("xs, u, du must be 1-d arrays of equal length")
        if self.xs.size < 2:
            raise ArgumentError("a trace needs at least two points")
        if not np.all(self.xs > 0):
            raise DomainError("trace grid must be strictly positive")
        if not np.all(np.diff(self.xs) > 0):
            raise ArgumentError("trace grid must be strictly increasing")
        self.ddu = ode_ddu(self.params, self.xs, self.u, self.du)

    @property
    def dddu(self) -> np.ndarray:
        return ode_dddu(self.params, self.xs, self.du, self.ddu)

    @property
    def x_min(self) -> float:
        return float(self.xs[0])

    @property
    def x_max(self) -> float:
        return float(self.xs[-1])

    def residuals(self) -> np.ndarray:
        p = self.params
        x = self.xs
        return -x * x * self.ddu + p.a * x * self.du + p.b * self.u - p.c * (self.du - 1.0) ** 2

    def residual_ok(self) -> bool:
        bound = self.tol * (1.0 + self.xs ** 2 * np.abs(self.ddu))
        return bool(np.all(np.abs(self.residuals()) <= bound))

    def __call__(self, x, deriv: int = 0):
        """Dense output.  deriv 0 interpolates u from (u, u', u''); deriv 1 and
        2 come from the interpolant of u' built on (u', u'', u''')."""
        x_arr = np.asarray(x, dtype=float)
        lo, hi = self.xs[0], self.xs[-1]
        if np.any(x_arr < lo * (1 - 1e-14)) or np.any(x_arr > hi * (1 + 1e-14)):
            raise DomainError(f"x outside the trace domain [{lo:.6g}, {hi:.6g}]")
        xx = np.clip(np.atleast_1d(x_arr), lo, hi)
        if deriv == 0:
            out = _hermite(self.xs, self.u, self.du, self.ddu, xx, 0)
        elif deriv in (1, 2):
            out = _hermite(self.xs, self.du, self.ddu, self.dddu, xx, deriv - 1)
        else:
            raise ArgumentError(f"deriv must be 0, 1 or 2, got {deriv!r}")
        return out if x_arr.ndim else float(out[0])

    def restrict(self, lo: float, hi: float) -> "GridSolution":
        m = (self.xs >= lo) & (self.xs <= hi)
        return GridSolution(self.xs[m], self.u[m], self.du[m], self.params, self.method, self.tol, dict(self.meta))

    def state(self, i: int) -> StatePoint:
        return StatePoint(float(self.xs[i]), float(self.u[i]), float(self.du[i]), float(self.ddu[i]))

    # serialisation ---------------------------------------------------------

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x", "u", "du", "ddu"])
            for row in zip(self.xs, self.u, self.du, self.ddu):
                w.writerow([format(float(v), ".17g") for v in row])

    def to_dict(self, arrays: bool = True) -> dict:
        d = {
            "schema_version": SCHEMA_VERSION,
            "params": self.params.as_dict(),
            "method": self.method,
            "tol": self.tol,
            "n_points": int(self.xs.size),
            "x_range": [self.x_min, self.x_max],
            "meta": _jsonable(self.meta),
        }
        if arrays:
            d["x"] = self.xs.tolist()
            d["u"] = self.u.tolist()
            d["du"] = self.du.tolist()
        return d

    def write_json(self, path, arrays: bool = True) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(arrays), fh, indent=1)
            fh.write("\n")

    @classmethod
    def from_dict(cls, d: dict) -> "GridSolution":
        return cls(np.array(d["x"]), np.array(d["u"]), np.array(d["du"]), ModelParams(**d["params"]),
                   d["method"], d["tol"], d.get("meta", {}))


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


@dataclass(frozen=True)
class TransformedState:
    """(t, u~, v~) with t = ln x, u~(t) = u(e^t), v~ = du~/dt = x u'."""
    t: float
    ut: float
    vt: float

    @classmethod
    def from_x(cls, x, u, du):
        return cls(math.log(x), u, x * du)

    def to_x(self):
        x = math.exp(self.t)
        return x, self.ut, self.vt / x


@dataclass
class ShootingResult:
    solution: GridSolution
    bracket: tuple
    n_bisections: int
    history: list
    meta: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "bracket": list(self.bracket),
            "n_bisections": self.n_bisections,
            "history": _jsonable(self.history),
            "meta": _jsonable(self.meta),
        }


# ---------------------------------------------------------------------------
# raw stepping
# ---------------------------------------------------------------------------

_STOP = {None: K.STOP_NONE, "none": K.STOP_NONE, "escape": K.STOP_ESCAPE, "envelope": K.STOP_ENVELOPE}


def _run_form(params, form, s0, y0, y1, s_end, tol, stop_mode, max_steps):
    ss, a0, a1 = [], [], []
    h0 = 0.0
    steps = 0
    while True:
        cap = min(_CHUNK, max_steps - steps + 1)
        bs, b0, b1 = np.empty(cap), np.empty(cap), np.empty(cap)
        n, code = K.dopri5(form, s0, y0, y1, s_end, params.a, params.b, params.c, tol, 1e-3 * tol,
                           h0, max_steps, stop_mode, bs, b0, b1)
        first = 0 if not ss else 1
        ss.append(bs[first:n])
        a0.append(b0[first:n])
        a1.append(b1[first:n])
        steps += n - 1
        if code == K.MAX_STEPS and n == cap and steps < max_steps and n >= 2:
            h0 = abs(bs[n - 1] - bs[n - 2])
            s0, y0, y1 = bs[n - 1], b0[n - 1], b1[n - 1]
            continue
        return np.concatenate(ss), np.concatenate(a0), np.concatenate(a1), code


def _path(params, x0, u0, du0, x_end, tol, stop_mode=K.STOP_NONE, x_switch=X_SWITCH, max_steps=5_000_000):
    """Step from x0 to x_end in either direction.  Returns (xs, u, du, code)
    in the direction of travel."""
    segs = []
    forward = x_end >= x0
    if forward:
        legs = []
        if x0 < x_switch:
            legs.append((K.FORM_X, x0, min(x_end, x_switch)))
        if x_end > x_switch:
            legs.append((K.FORM_T, max(x0, x_switch), x_end))
    else:
        legs = []
        if x0 > x_switch:
            legs.append((K.FORM_T, x0, max(x_end, x_switch)))
        if x_end < x_switch:
            legs.append((K.FORM_X, min(x0, x_switch), x_end))
    x, u, du = x0, u0, du0
    code = K.OK
    for form, xa, xb in legs:
        if form == K.FORM_X:
            s, e, y1 = xa, xb, du
        else:
            s, e, y1 = math.log(xa), math.log(xb), xa * du
        ss, y0s, y1s, code = _run_form(params, form, s, u, y1, e, tol, stop_mode, max_steps)
        if form == K.FORM_X:
            xs, us, dus = ss, y0s, y1s
        else:
            xs = np.exp(ss)
            us, dus = y0s, y1s / xs
        if segs:
            xs, us, dus = xs[1:], us[1:], dus[1:]
        segs.append((xs, us, dus))
        x, u, du = xs[-1] if xs.size else x, us[-1] if us.size else u, dus[-1] if dus.size else du
        if code != K.OK:
            break
    xs = np.concatenate([s[0] for s in segs])
    us = np.concatenate([s[1] for s in segs])
    dus = np.concatenate([s[2] for s in segs])
    return xs, us, dus, code


def _as_solution(params, xs, us, dus, method, tol, meta=None):
    if xs[0] > xs[-1]:
        xs, us, dus = xs[::-1], us[::-1], dus[::-1]
    keep = np.concatenate([[True], np.diff(xs) > 0])
    return GridSolution(xs[keep].copy(), us[keep].copy(), dus[keep].copy(), params, method, tol, meta or {})


def integrate(params: ModelParams, start, x_end: float, tol: float = 1e-10, *, x_switch: float = X_SWITCH,
              stop: str | None = None, max_steps: int = 5_000_000) -> GridSolution:
    """Adaptive Dormand-Prince trace from ``start = (x, u, du)`` to ``x_end``.

    Raises BlowUpError if the step size collapses or the state runs off to
    infinity, NumericError on NaN.  With ``stop`` set to "escape" or
    "envelope" the trace ends early at the first classified point and the
    reason is stored in ``meta["stop"]``.
    """
    if isinstance(start, StatePoint):
        x0, u0, du0 = start.x, start.u, start.du
    else:
        x0, u0, du0 = (float(v) for v in start)
    if not x0 > 0 or not x_end > 0:
        raise DomainError("start and end points must have x > 0")
    if not tol > 0:
        raise ArgumentError("tol must be positive")
    xs, us, dus, code = _path(params, x0, u0, du0, float(x_end), tol, _STOP[stop], x_switch, max_steps)
    if code == K.BLOWUP:
        raise BlowUpError(f"integration blew up near x={xs[-1]:.6g}", float(xs[-1]))
    if code == K.NONFINITE:
        raise NumericError(f"non-finite right-hand side near x={xs[-1]:.6g}")
    if code == K.MAX_STEPS:
        raise NumericError(f"step limit reached near x={xs[-1]:.6g}")
    meta = {"start": [x0, u0, du0], "x_switch": x_switch}
    if code == K.ESCAPE_ABOVE:
        meta["stop"] = "escape_above"
    elif code == K.ESCAPE_BELOW:
        meta["stop"] = "escape_below"
    return _as_solution(params, xs, us, dus, "raw_ivp", tol, meta)


# ---------------------------------------------------------------------------
# series seed
# ---------------------------------------------------------------------------


def auto_series_x(params: ModelParams, n: int = 3, rel: float = 1e-10, x_cap: float = 1e-6,
                  x_floor: float = 1e-9) -> float:
    """Largest x (capped) at which the n-th series term is below ``rel`` relative to x."""
    kn = abs(float(coefficients(params, n).ks[n]))
    x = x_cap if kn == 0 else min(x_cap, (rel / kn) ** (2.0 / n))
    return max(x, x_floor)


def series_start(params: ModelParams, n: int = 3, x_s: float | None = None, *, rel_limit: float = 1e-3):
    """(x_s, f_n(x_s), f_n'(x_s)).  ``x_s=None`` picks it automatically."""
    params.require(Regime.RICH)
    co = coefficients(params, n)
    if x_s is None:
        x_s = auto_series_x(params, n)
    if not x_s > 0:
        raise DomainError("x_s must be > 0")
    kn = abs(co.ks[n])
    rel = kn * x_s ** (n / 2.0)
    if rel >= rel_limit:
        suggested = (0.5 * rel_limit / kn) ** (2.0 / n)
        raise PrecisionError(
            f"term {n} of the series is {rel:.3g} relative to x at x_s={x_s:g}; use x_s <= {suggested:.3g}",
            suggested,
        )
    return x_s, eval_partial(co, n, x_s, 0), eval_partial(co, n, x_s, 1)


# ---------------------------------------------------------------------------
# backward shooting on the slope
# ---------------------------------------------------------------------------


@dataclass
class _Shot:
    slope: float
    sign: int  # +1: ended above target, -1: below
    label: str
    value: float  # u(x_end) - target when the end was reached, else nan
    path: tuple


def _backward_shot(params, x0, u0, s, x_end, target, tol, stop_mode):
    xs, us, dus, code = _path(params, x0, u0, s, x_end, tol, stop_mode)
    if code == K.OK:
        v = float(us[-1] - target)
        return _Shot(s, 1 if v >= 0 else -1, "reached", v, (xs, us, dus))
    if code == K.ESCAPE_ABOVE:
        return _Shot(s, 1, "escape_above", math.nan, (xs, us, dus))
    if code == K.ESCAPE_BELOW:
        return _Shot(s, -1, "escape_below", math.nan, (xs, us, dus))
    if code == K.MAX_STEPS:
        raise NumericError(f"step limit in backward shot with slope {s!r}")
    # blow-up: a slope running off to +inf going backwards drags u down
    last_du = dus[-1]
    sign = -1 if (math.isnan(last_du) or last_du > 0) else 1
    return _Shot(s, sign, "blowup", math.nan, (xs, us, dus))


def _shoot_slope(params, x0, u0, x_end, target, tol, *, stop_mode=K.STOP_ENVELOPE, bracket=None,
                 s_limit=1e3, root_tol=None):
    """Find u'(x0) such that the backward trajectory from (x0, u0) hits
    ``target`` at ``x_end``.  u(x_end) is assumed to decrease with the slope;
    the assumption is checked through the bracket signs."""
    history = []

    def shoot(s):
        sh = _backward_shot(params, x0, u0, s, x_end, target, tol, stop_mode)
        history.append({"slope": s, "class": sh.label, "value": sh.value})
        return sh

    if bracket is None:
        centre = u0 / x0
        lo_s, hi_s = centre - 1.0, centre + 1.0
    else:
        lo_s, hi_s = bracket
    lo, hi = shoot(lo_s), shoot(hi_s)
    width = hi_s - lo_s
    while lo.sign < 0 and abs(lo_s) < s_limit:
        width *= 2
        lo_s -= width
        lo = shoot(lo_s)
    while hi.sign > 0 and abs(hi_s) < s_limit:
        width *= 2
        hi_s += width
        hi = shoot(hi_s)
    if lo.sign < 0 or hi.sign > 0:
        raise BracketError(f"no slope bracket within |s| < {s_limit:g}", history)
    n_bis = 0
    while True:
        mid_s = 0.5 * (lo.slope + hi.slope)
        if mid_s <= lo.slope or mid_s >= hi.slope:
            break
        mid = shoot(mid_s)
        n_bis += 1
        if mid.sign > 0:
            lo = mid
        else:
            hi = mid
    reached = [sh for sh in (lo, hi) if sh.label == "reached"]
    if not reached:
        raise BracketError("bracket collapsed between two non-reaching shots", history)
    best = min(reached, key=lambda sh: abs(sh.value))
    if root_tol is None:
        root_tol = 1e-6 * max(abs(x0), 1.0)
    if abs(best.value) > root_tol:
        raise BracketError(
            f"sign change at slope {best.slope:.17g} is a jump, not a root (|mismatch| = {abs(best.value):.3g})",
            history,
        )
    return best, (lo.slope, hi.slope), n_bis, history


def solve_local(params: ModelParams, eps: float, x0: float, u0: float, tol: float = 1e-10, *,
                bracket=None) -> GridSolution:
    """Local solution on [eps, x0] with u(eps) = 0 and u(x0) = u0, found by
    bisection on u'(x0) of backward shots kept inside 0 <= u <= x."""
    params.require(Regime.RICH)
    if not 0 < eps < x0:
        raise ArgumentError("need 0 < eps < x0")
    if not 0 <= u0 <= x0:
        raise ArgumentError(f"u0={u0!r} lies outside [0, x0]")
    best, br, n_bis, hist = _shoot_slope(params, x0, u0, eps, 0.0, tol, bracket=bracket,
                                         root_tol=max(1e-9 * x0, 10 * tol * eps))
    meta = {"eps": eps, "x0": x0, "u0": u0, "slope": best.slope, "bracket": list(br),
            "n_bisections": n_bis, "mismatch": best.value, "history": hist}
    return _as_solution(params, *best.path, "local_bvp", tol, meta)


def default_eps_seq(eps_min: float = 1e-8, eps_max: float = 1e-2) -> list[float]:
    n = int(round(math.log10(eps_max / eps_min)))
    return [eps_max * 10.0 ** -i for i in range(n + 1)]


def _sup_diff(s1: GridSolution, s2: GridSolution, lo: float, hi: float) -> float:
    xs = s1.xs[(s1.xs >= lo) & (s1.xs <= hi)]
    xs = np.concatenate([xs, s2.xs[(s2.xs >= lo) & (s2.xs <= hi)]])
    return float(np.max(np.abs(s1(xs) - s2(xs))))


def continue_to_zero(params: ModelParams, x0: float, u0: float, eps_seq=None, tol: float = 1e-6, *,
                     solve_tol: float = 1e-10) -> GridSolution:
    """Solve on [eps, x0] for each eps in a decreasing sequence and accept
    the finest trace once two consecutive traces agree to ``tol`` in the
    sup-norm on the coarser one's interval."""
    params.require(Regime.RICH)
    eps_seq = list(default_eps_seq() if eps_seq is None else eps_seq)
    if len(eps_seq) < 2 or any(e2 >= e1 for e1, e2 in zip(eps_seq, eps_seq[1:])):
        raise ArgumentError("eps_seq must be strictly decreasing with at least two entries")
    if eps_seq[-1] < 1e-8:
        raise ArgumentError("eps values below 1e-8 are not supported")
    history = []
    prev = None
    for eps in eps_seq:
        sol = solve_local(params, eps, x0, u0, solve_tol)
        if prev is not None:
            d = _sup_diff(prev, sol, prev.x_min, x0)
            history.append({"eps": eps, "sup_diff": d})
            log.info("continue_to_zero eps=%g sup_diff=%.3g", eps, d)
        prev = sol
    if history[-1]["sup_diff"] >= tol:
        raise ConvergenceError(f"traces not Cauchy: last difference {history[-1]['sup_diff']:.3g} >= {tol:g}",
                               history)
    prev.meta["convergence"] = history
    prev.meta["eps_seq"] = eps_seq
    return prev


# ---------------------------------------------------------------------------
# global solution
# ---------------------------------------------------------------------------

_CLASS = {K.ESCAPE_ABOVE: "escape_above", K.ESCAPE_BELOW: "escape_below"}


def _forward(params, x0, u0, du0, x_end, tol):
    """Forward shot with escape classification; retries once at a tighter
    tolerance if it blows up before being classified."""
    for t in (tol, tol * 1e-2):
        xs, us, dus, code = _path(params, x0, u0, du0, x_end, t, K.STOP_ESCAPE)
        if code in (K.OK, K.ESCAPE_ABOVE, K.ESCAPE_BELOW):
            return xs, us, dus, code
        log.debug("forward shot from u=%r inconclusive (code %d), retrying", u0, code)
    raise InconclusiveShotError(f"shot from x={x0:g}, u={u0!r} blew up before it could be classified")


def _linear_exact(params, x_s, X_max, tol):
    xs = np.geomspace(x_s, X_max, 401)
    sol = GridSolution(xs, xs.copy(), np.ones_like(xs), params, "global_shoot", tol, {"exact": "u=x"})
    return ShootingResult(sol, (1.0, 1.0), 0, [], {"exact": True})


def solve_global(params: ModelParams, x_s: float | None = None, X_max: float = 1e4, tol: float = 1e-12, *,
                 x_m: float = 1.0, max_reanchor: int = 12) -> ShootingResult:
    """The separating solution with 0 < u < x on [x_s, X_max].

    The shooting parameter is u(x_m).  For each trial value the slope at x_m
    comes from a backward solve that lands on the series value at x_s; the
    forward shot to X_max is then classified as escaping above or below.
    If the anchor bracket collapses to rounding before a shot survives to
    X_max, bisection restarts further out between the two bracketing shots.
    """
    if params.regime is Regime.NO_SOLUTION:
        raise RegimeError(f"no solution exists for a+b={params.a + params.b!r} < 0")
    if x_s is None:
        x_s = auto_series_x(params) if params.regime is Regime.RICH else 1e-6
    if not 0 < x_s < x_m < X_max:
        raise ArgumentError("need 0 < x_s < x_m < X_max")
    if params.regime is Regime.LINEAR_EXACT:
        return _linear_exact(params, x_s, X_max, tol)

    xs_seed, u_seed, du_seed = series_start(params, 3, x_s)
    history = []
    inner_cache = {}

    def inner(um):
        if um not in inner_cache:
            best, br, _, _ = _shoot_slope(params, x_m, um, xs_seed, u_seed, tol,
                                          root_tol=max(1e-6 * xs_seed, 10 * tol * xs_seed))
            inner_cache[um] = best
        return inner_cache[um]

    def classify_anchor(um):
        try:
            back = inner(um)
        except BracketError:
            return None, None, None
        xs, us, dus, code = _forward(params, x_m, um, back.slope, X_max, tol)
        history.append({"param": um, "class": _CLASS.get(code, "reached"), "x_stop": float(xs[-1])})
        return code, back, (xs, us, dus)

    lo, hi = 0.0, x_m
    code_lo, _, path_lo = classify_anchor(lo)
    code_hi, _, path_hi = classify_anchor(hi)
    if code_lo is None:
        history.append({"param": lo, "class": "escape_below", "x_stop": x_m, "assumed": True})
        code_lo = K.ESCAPE_BELOW
    if code_hi is None:
        history.append({"param": hi, "class": "escape_above", "x_stop": x_m, "assumed": True})
        code_hi = K.ESCAPE_ABOVE
    n_bis = 0
    found = None
    if code_lo == K.OK:
        found = (lo, inner(lo), path_lo)
    elif code_hi == K.OK:
        found = (hi, inner(hi), path_hi)
    elif code_lo == code_hi:
        raise BracketError("both ends of the anchor bracket escape on the same side", history)
    while found is None:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        code, back, path = classify_anchor(mid)
        n_bis += 1
        if code is None:
            raise BracketError(f"no backward slope for anchor value {mid!r}", history)
        if code == K.OK:
            found = (mid, back, path)
        elif code == K.ESCAPE_ABOVE:
            hi, path_hi = mid, path
        else:
            lo, path_lo = mid, path

    reanchors = []
    if found is not None:
        um, back, fwd = found
        forward_parts = [fwd]
    else:
        um = 0.5 * (lo + hi)
        back = inner(lo)
        forward_parts, n_more = _reanchor(params, path_lo, path_hi, X_max, tol, history, reanchors,
                                          max_reanchor)
        n_bis += n_more

    bx, bu, bdu = back.path  # x_m down to x_s
    xs = [bx[::-1]]
    us = [bu[::-1]]
    dus = [bdu[::-1]]
    for px, pu, pdu in forward_parts:
        xs.append(px[1:])
        us.append(pu[1:])
        dus.append(pdu[1:])
    meta = {
        "x_s": xs_seed, "seed": [u_seed, du_seed], "x_m": x_m, "anchor_u": um, "anchor_slope": back.slope,
        "X_max": X_max, "reanchors": reanchors, "bracket_history": history,
    }
    sol = _as_solution(params, np.concatenate(xs), np.concatenate(us), np.concatenate(dus),
                       "global_shoot", tol, meta)
    return ShootingResult(sol, (lo, hi), n_bis, history, {"reanchors": len(reanchors)})


def _dense_state(params, xs, us, dus, x):
    ddu = ode_ddu(params, xs, us, dus)
    dddu = ode_dddu(params, xs, dus, ddu)
    at = np.array([x])
    return float(_hermite(xs, us, dus, ddu, at, 0)[0]), float(_hermite(xs, dus, ddu, dddu, at, 0)[0])


def _reanchor(params, path_lo, path_hi, X_max, tol, history, reanchors, max_reanchor):
    """Bisect between the two bracketing shots at a point where they still
    agree, moving the restart point outward until a shot reaches X_max."""
    n_bis = 0
    prefix = []
    for _ in range(max_reanchor):
        lx, lu, ldu = path_lo
        hx, hu, hdu = path_hi
        # restart halfway (in ln x) to where the first of the two shots escaped
        x_c = math.sqrt(lx[0] * min(lx[-1], hx[-1]))
        s_lo = _dense_state(params, lx, lu, ldu, x_c)
        s_hi = _dense_state(params, hx, hu, hdu, x_c)
        reanchors.append({"x": x_c, "lo": s_lo, "hi": s_hi})
        m = lx <= x_c
        prefix.append((np.concatenate([lx[m], [x_c]]), np.concatenate([lu[m], [s_lo[0]]]),
                       np.concatenate([ldu[m], [s_lo[1]]])))
        th_lo, th_hi = 0.0, 1.0
        while True:
            th = 0.5 * (th_lo + th_hi)
            if th <= th_lo or th >= th_hi:
                break
            u0 = s_lo[0] + th * (s_hi[0] - s_lo[0])
            du0 = s_lo[1] + th * (s_hi[1] - s_lo[1])
            xs, us, dus, code = _forward(params, x_c, u0, du0, X_max, tol)
            n_bis += 1
            history.append({"param": th, "anchor_x": x_c, "class": _CLASS.get(code, "reached"),
                            "x_stop": float(xs[-1])})
            if code == K.OK:
                return prefix + [(xs, us, dus)], n_bis
            if code == K.ESCAPE_ABOVE:
                th_hi, path_hi = th, (xs, us, dus)
            else:
                th_lo, path_lo = th, (xs, us, dus)
    raise InconclusiveShotError(f"no shot reached X_max={X_max:g} after {max_reanchor} re-anchorings")


# ---------------------------------------------------------------------------
# nonexistence probe
# ---------------------------------------------------------------------------


@dataclass
class ProbeReport:
    params: ModelParams
    xbar: float
    u_bar: float
    delta: float
    delta_hat: float | None
    entries: list
    passed: bool

    def as_dict(self):
        return {
            "schema_version": SCHEMA_VERSION,
            "params": self.params.as_dict(),
            "xbar": self.xbar,
            "u_bar": self.u_bar,
            "delta": self.delta,
            "delta_hat": self.delta_hat,
            "threshold": 0.9 * self.delta,
            "passed": self.passed,
            "entries": _jsonable(self.entries),
        }


def nonexistence_probe(params: ModelParams, xbar: float = 1.0, eps_seq=None, *, u_bar: float = 1e-3,
                       tol: float = 1e-10, scan_width: float = 6.0, scan_points: int = 121) -> ProbeReport:
    """For a+b < 0: try the regularised problem u(eps) = 0, u(xbar) = u_bar for
    each eps and fit the resulting u'(eps) against ln(xbar/eps).

    An eps at which no solution is found is kept in the report with the
    closest approach to u(eps) = 0 among shots that reached eps (the bracket
    search plus a uniform scan of slopes at xbar); the fit uses only the
    solved levels.
    """
    if params.regime is not Regime.NO_SOLUTION:
        raise ArgumentError("the probe requires a+b < 0")
    if not xbar > 0:
        raise ArgumentError("xbar must be > 0")
    eps_seq = list([1e-2, 1e-3, 1e-4, 1e-5, 1e-6] if eps_seq is None else eps_seq)
    delta = -(params.a + params.b) / 2.0
    entries = []
    for eps in eps_seq:
        try:
            best, br, n_bis, hist = _shoot_slope(params, xbar, u_bar, eps, 0.0, tol, stop_mode=K.STOP_NONE,
                                                 s_limit=1e3, root_tol=1e-6 * xbar)
            entries.append({"eps": eps, "status": "solved", "du_eps": float(best.path[2][-1]),
                            "slope_xbar": best.slope})
        except (BracketError, NumericError) as exc:
            samples = list(getattr(exc, "samples", []) or [])
            centre = u_bar / xbar
            for s in np.linspace(centre - scan_width, centre + scan_width, scan_points):
                sh = _backward_shot(params, xbar, u_bar, float(s), eps, 0.0, tol, K.STOP_NONE)
                samples.append({"slope": float(s), "class": sh.label, "value": sh.value})
            reached = [h for h in samples if h["class"] == "reached"]
            gap = min((abs(h["value"]) for h in reached), default=math.nan)
            closest = min(reached, key=lambda h: abs(h["value"]), default=None)
            entries.append({"eps": eps, "status": "failed", "reason": str(exc), "gap": gap,
                            "closest": closest, "n_shots": len(samples)})
        log.info("probe eps=%g -> %s", eps, entries[-1]["status"])
    solved = [e for e in entries if e["status"] == "solved"]
    delta_hat = None
    if len(solved) >= 2:
        L = np.log(xbar / np.array([e["eps"] for e in solved]))
        D = np.array([e["du_eps"] for e in solved])
        delta_hat = float(np.polyfit(L, D, 1)[0])
    passed = delta_hat is not None and delta_hat >= 0.9 * delta
    return ProbeReport(params, xbar, u_bar, delta, delta_hat, entries, passed)
