"""Numerical checks of the qualitative behaviour of solution traces."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ArgumentError, LiqodeError, Regime, ode_ddu
from .solver import GridSolution


class FitError(LiqodeError):
    pass


class SeparationError(LiqodeError):
    pass


DEADBAND = 1e-10


def _sign(v, deadband=DEADBAND):
    v = np.asarray(v, dtype=float)
    s = np.sign(v).astype(int)
    s[np.abs(v) <= deadband * (1.0 + np.abs(v))] = 0
    return s


def _runs(xs, s):
    out = []
    start = 0
    for i in range(1, len(s) + 1):
        if i == len(s) or s[i] != s[start]:
            out.append((float(xs[start]), float(xs[i - 1]), int(s[start])))
            start = i
    return out


GLOBAL_PATTERN = {"u": 1, "du": 1, "ddu": -1, "dddu": 1}


@dataclass
class SignProfile:
    intervals: dict
    violations: list
    boundary: list
    strict: dict
    expected: dict

    @property
    def ok(self) -> bool:
        return not self.violations

    @property
    def strict_ok(self) -> bool:
        return all(self.strict.values())

    def as_dict(self):
        return {
            "intervals": self.intervals,
            "violations": self.violations,
            "boundary": self.boundary,
            "strict": self.strict,
            "expected": self.expected,
        }

    def write_violations_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quantity", "x", "value"])
            for v in self.violations:
                w.writerow([v["quantity"], format(v["x"], ".17g"), format(v["value"], ".17g")])


def sign_profile(sol: GridSolution, expected: dict | None = None, deadband: float = DEADBAND) -> SignProfile:
    """Sign intervals of u, u', u'', u''' along the trace.

    Values inside the dead-band count as zero; a quantity that is zero over
    the whole trace (u'' on the line u = x, say) is a boundary case rather
    than a violation.  ``strict`` records whether every grid value has the
    expected sign with no dead-band at all.
    """
    expected = dict(GLOBAL_PATTERN if expected is None else expected)
    fields = {"u": sol.u, "du": sol.du, "ddu": sol.ddu, "dddu": sol.dddu}
    intervals, violations, boundary, strict = {}, [], [], {}
    for name, vals in fields.items():
        s = _sign(vals, deadband)
        intervals[name] = _runs(sol.xs, s)
        want = expected.get(name)
        if want is None:
            continue
        if np.all(s == 0):
            boundary.append(name)
        bad = np.nonzero(s == -want)[0]
        for i in bad:
            violations.append({"quantity": name, "x": float(sol.xs[i]), "value": float(vals[i])})
        strict[name] = bool(np.all(np.sign(vals) == want))
    return SignProfile(intervals, violations, boundary, strict, expected)


@dataclass
class FitReport:
    model: str
    coefficients: dict
    fit_range: tuple
    residual_norm: float
    n_points: int
    extra: dict = field(default_factory=dict)

    def as_dict(self):
        return {
            "model": self.model,
            "coefficients": self.coefficients,
            "fit_range": list(self.fit_range),
            "residual_norm": self.residual_norm,
            "n_points": self.n_points,
            "extra": self.extra,
        }


def _fit_window(sol, rng, min_points=8):
    lo, hi = (10.0 * sol.x_min, 1e-2) if rng is None else rng
    if not (lo >= sol.x_min * (1 - 1e-12) and hi <= sol.x_max * (1 + 1e-12) and lo < hi):
        raise FitError(f"fit range [{lo:g}, {hi:g}] is not inside the trace domain")
    m = (sol.xs >= lo) & (sol.xs <= hi)
    if m.sum() < min_points:
        # top up with dense output on a log grid
        xs = np.geomspace(lo, hi, 64)
    else:
        xs = sol.xs[m]
    if xs.size < min_points:
        raise FitError("fewer than 8 points in the fit range")
    return (lo, hi), xs


def asymptote_fit(sol: GridSolution, rng=None) -> FitReport:
    """Fit u' - 1 = -k sqrt(x) + d x and u - x = q x^(3/2) + r x^2 near 0.

    The next-order term keeps the leading coefficients unbiased over a
    window several decades wide.
    """
    (lo, hi), xs = _fit_window(sol, rng)
    du = sol(xs, 1)
    u = sol(xs, 0)
    sq = np.sqrt(xs)
    A = np.column_stack([sq, xs])
    co, *_ = np.linalg.lstsq(A, du - 1.0, rcond=None)
    res1 = float(np.linalg.norm(A @ co - (du - 1.0)))
    B = np.column_stack([xs * sq, xs * xs])
    co2, *_ = np.linalg.lstsq(B, u - xs, rcond=None)
    res2 = float(np.linalg.norm(B @ co2 - (u - xs)))
    k_hat = float(-co[0])
    p = sol.params
    extra = {"x32_coef": float(co2[0]), "x32_residual": res2}
    if p.regime is not Regime.NO_SOLUTION:
        extra["k"] = p.k
        extra["x32_expected"] = -2.0 / 3.0 * p.k
    return FitReport("du-1 ~ -k sqrt(x) + d x", {"k_hat": k_hat, "d": float(co[1])}, (lo, hi), res1,
                     int(xs.size), extra)


@dataclass
class AttackReport:
    min_margin: float
    x_at_min: float
    boundary: bool

    @property
    def holds(self) -> bool:
        return self.min_margin > 0 and not self.boundary

    def as_dict(self):
        return {"min_margin": self.min_margin, "x_at_min": self.x_at_min, "boundary": self.boundary,
                "holds": self.holds}


def attack_inequality(sol: GridSolution) -> AttackReport:
    """Minimum over the grid of 1 + u' - 2u/x."""
    margin = 1.0 + sol.du - 2.0 * sol.u / sol.xs
    i = int(np.argmin(margin))
    m = float(margin[i])
    return AttackReport(m, float(sol.xs[i]), abs(m) <= DEADBAND)


def _common_grid(u: GridSolution, v: GridSolution):
    if u.params != v.params:
        raise ArgumentError("traces belong to different parameters")
    lo, hi = max(u.x_min, v.x_min), min(u.x_max, v.x_max)
    if not lo < hi:
        raise ArgumentError("traces have no common domain")
    xs = np.union1d(u.xs[(u.xs >= lo) & (u.xs <= hi)], v.xs[(v.xs >= lo) & (v.xs <= hi)])
    return xs


@dataclass
class DichotomyReport:
    sign: int
    one_signed: bool
    identical: bool
    n_resolved: int
    n_pos: int
    n_neg: int
    x_range: tuple
    dw_end: float

    def as_dict(self):
        return {
            "sign": self.sign,
            "one_signed": self.one_signed,
            "identical": self.identical,
            "n_resolved": self.n_resolved,
            "n_pos": self.n_pos,
            "n_neg": self.n_neg,
            "x_range": list(self.x_range),
            "dw_end": self.dw_end,
        }


def difference_dichotomy(u: GridSolution, v: GridSolution, *, error_scale: float = 100.0) -> DichotomyReport:
    """Sign of w'' for w = v - u on the common domain.

    Both traces are resampled on the union of their grids and w'' is taken
    from the equation at each trace's (u, u').  Points where |w''| is below
    the propagated error of those inputs are unresolved and do not count.
    """
    xs = _common_grid(u, v)
    p = u.params
    uu, udu = u(xs, 0), u(xs, 1)
    vu, vdu = v(xs, 0), v(xs, 1)
    uddu = ode_ddu(p, xs, uu, udu)
    vddu = ode_ddu(p, xs, vu, vdu)
    w2 = vddu - uddu
    tau = error_scale * max(u.tol, v.tol)
    floor = (abs(p.a) * xs * tau * (1 + np.abs(udu)) + abs(p.b) * tau * (1 + np.abs(uu))
             + 2 * p.c * np.abs(udu - 1.0) * tau * (1 + np.abs(udu))) / (xs * xs)
    floor += 64 * np.finfo(float).eps * (np.abs(uddu) + np.abs(vddu))
    resolved = np.abs(w2) > floor
    n_pos = int(np.sum(resolved & (w2 > 0)))
    n_neg = int(np.sum(resolved & (w2 < 0)))
    identical = n_pos + n_neg == 0
    sign = 0 if identical else (1 if n_pos >= n_neg else -1)
    one_signed = identical or n_pos == 0 or n_neg == 0
    dw_end = float(vdu[-1] - udu[-1])
    return DichotomyReport(sign, bool(one_signed), bool(identical), n_pos + n_neg, n_pos, n_neg,
                           (float(xs[0]), float(xs[-1])), dw_end)


def separation_decay(u: GridSolution, v: GridSolution, *, x_hi: float | None = None, tol: float | None = None,
                     powers=(2, 3, 4)) -> FitReport:
    """Fit ln|v - u| = C - s / sqrt(x) where |v - u| is above the noise floor.

    ``extra["superpoly"][p]`` is true when the local exponent d ln|v-u| /
    d ln x over the smallest-x third of the window exceeds p and |v-u|/x^p
    shrinks by at least 100x across the window.
    """
    xs = _common_grid(u, v)
    tol = max(u.tol, v.tol) if tol is None else tol
    d = np.abs(v(xs, 0) - u(xs, 0))
    if x_hi is None:
        x_hi = 0.3 * xs[-1]
    m = (d > 10 * tol) & (xs <= x_hi)
    if m.sum() < 8:
        raise SeparationError("|v - u| is below the noise floor on the fit range")
    # contiguous window ending at x_hi
    idx = np.nonzero(m)[0]
    xf, df = xs[idx], d[idx]
    A = np.column_stack([np.ones_like(xf), -1.0 / np.sqrt(xf)])
    co, *_ = np.linalg.lstsq(A, np.log(df), rcond=None)
    res = float(np.linalg.norm(A @ co - np.log(df)))
    third = max(3, xf.size // 3)
    local_exp = float(np.polyfit(np.log(xf[:third]), np.log(df[:third]), 1)[0])
    superpoly, drops = {}, {}
    for pw in powers:
        r = df / xf ** pw
        drops[pw] = float(r[0] / r[-1])
        superpoly[pw] = bool(local_exp > pw and drops[pw] < 1e-2)
    s = float(co[1])
    p = u.params
    extra = {"local_exponent": local_exp, "superpoly": superpoly, "ratio_drop": drops}
    if p.regime is Regime.RICH:
        extra["4ck"] = 4 * p.c * p.k
        extra["rel_dev_from_4ck"] = abs(s - 4 * p.c * p.k) / (4 * p.c * p.k)
    return FitReport("ln|v-u| ~ C - s/sqrt(x)", {"s": s, "C": float(co[0])}, (float(xf[0]), float(xf[-1])),
                     res, int(xf.size), extra)


def one_root_check(sol: GridSolution) -> dict:
    """Number of sign changes of u'' (ignoring dead-band zeros)."""
    s = _sign(sol.ddu)
    s = s[s != 0]
    changes = int(np.sum(s[1:] != s[:-1]))
    return {"sign_changes": changes, "holds": changes <= 1}


def trichotomy_check(sol: GridSolution, tol: float = 1e-2, bound: float = 1e3) -> dict:
    """Where a monotone trace ends up: c/b if b != 0, beyond every bound if b = 0.

    With b = 0 the growth is only logarithmic, u ~ c/(a+1) ln x, so a trace
    that stays below ``bound`` still counts as unbounded when x u' over
    [x_max/1e3, x_max/10] sits within 10% of c/(a+1) > 0.
    """
    p = sol.params
    if p.b != 0:
        target = p.c / p.b
        dist = float(abs(sol.u[-1] - target))
        return {"target": target, "u_end": float(sol.u[-1]), "distance": dist, "holds": dist <= tol}
    out = {"target": math.inf, "u_end": float(sol.u[-1])}
    m = (sol.xs >= sol.x_max * 1e-3) & (sol.xs <= sol.x_max * 0.1)
    if m.any() and p.a + 1 > 0:
        expect = p.c / (p.a + 1)
        slope = float(np.median(sol.xs[m] * sol.du[m]))
        out.update({"log_slope": slope, "log_slope_expected": expect})
        out["holds"] = bool(sol.u.max() > bound or abs(slope - expect) <= 0.1 * expect)
    else:
        out["holds"] = bool(sol.u.max() > bound)
    return out


def du_at_zero_check(sol: GridSolution) -> dict:
    p = sol.params
    k = p.k if p.regime is not Regime.NO_SOLUTION else 0.0
    gap = float(abs(sol.du[0] - 1.0))
    lim = 5.0 * k * math.sqrt(sol.x_min)
    return {"x_min": sol.x_min, "gap": gap, "limit": lim, "holds": gap < lim or (k == 0 and gap <= DEADBAND)}


def du_at_infinity_check(sol: GridSolution, threshold: float = 1e-3) -> dict:
    return {"x_max": sol.x_max, "du_end": float(sol.du[-1]), "threshold": threshold,
            "holds": bool(0 <= sol.du[-1] < threshold)}
