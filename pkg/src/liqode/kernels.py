"""Hot loops: the Dormand-Prince stepper for the ODE and the Monte Carlo
liquidation kernel.

Both are written against plain floats/arrays so the same source runs under
numba or as ordinary Python (see ``_jit``).  The Monte Carlo kernel also has
a vectorised numpy twin, used when numba is switched off.
"""

import math

import numpy as np

from ._jit import NUMBA_ENABLED, njit, prange

# forms of the first-order system
FORM_X = 0  # (u, u') in x
FORM_T = 1  # (u~, du~/dt) in t = ln x

# stop modes
STOP_NONE = 0
STOP_ESCAPE = 1  # forward shots of the global solver
STOP_ENVELOPE = 2  # backward shots confined to 0 <= u <= x

# kernel exit codes
OK = 0
ESCAPE_ABOVE = 1
ESCAPE_BELOW = 2
BLOWUP = 3
NONFINITE = 4
MAX_STEPS = 5

# Dormand-Prince 5(4)
_C2, _C3, _C4, _C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
_A21 = 1 / 5
_A31, _A32 = 3 / 40, 9 / 40
_A41, _A42, _A43 = 44 / 45, -56 / 15, 32 / 9
_A51, _A52, _A53, _A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
_A61, _A62, _A63, _A64, _A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
_B1, _B3, _B4, _B5, _B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
_E1, _E3, _E4, _E5, _E6, _E7 = (
    71 / 57600,
    -71 / 16695,
    71 / 1920,
    -17253 / 339200,
    22 / 525,
    -1 / 40,
)


@njit(cache=True)
def _rhs(form, s, y0, y1, a, b, c):
    if form == FORM_X:
        return y1, (a * s * y1 + b * y0 - c * (y1 - 1.0) ** 2) / (s * s)
    e = math.exp(-s)
    return y1, (a + 1.0) * y1 + b * y0 - c * (e * y1 - 1.0) ** 2


@njit(cache=True)
def _to_x(form, s, y0, y1):
    if form == FORM_X:
        return s, y0, y1
    x = math.exp(s)
    return x, y0, y1 / x


@njit(cache=True)
def _classify(mode, form, s, y0, y1, a, b, c):
    if mode == STOP_NONE:
        return OK
    x, u, du = _to_x(form, s, y0, y1)
    if mode == STOP_ESCAPE:
        ddu = (a * x * du + b * u - c * (du - 1.0) ** 2) / (x * x)
        if u > x or du > 1.0 + 1e-9 or ddu > 0.0:
            return ESCAPE_ABOVE
        if u < -1e-12 or du < -1e-9:
            return ESCAPE_BELOW
        return OK
    # STOP_ENVELOPE
    if u > x * (1.0 + 1e-12):
        return ESCAPE_ABOVE
    if u < -1e-12 * (1.0 + x):
        return ESCAPE_BELOW
    return OK


@njit(cache=True)
def dopri5(form, s0, y0, y1, s_end, a, b, c, rtol, atol, h0, max_steps, stop_mode,
           out_s, out_y0, out_y1):
    """Integrate from ``s0`` to ``s_end`` (either direction).

    Every accepted step is written to ``out_*``; returns ``(n_stored, code)``.
    """
    direction = 1.0 if s_end >= s0 else -1.0
    s = s0
    out_s[0] = s
    out_y0[0] = y0
    out_y1[0] = y1
    n = 1
    cap = out_s.shape[0]
    span = abs(s_end - s0)
    if span == 0.0:
        return n, OK
    h = min(abs(h0), span) if h0 != 0.0 else 1e-3 * span
    k1a, k1b = _rhs(form, s, y0, y1, a, b, c)
    if not (math.isfinite(k1a) and math.isfinite(k1b)):
        return n, NONFINITE
    steps = 0
    rejected_last = False
    while direction * (s_end - s) > 0.0:
        if steps >= max_steps or n >= cap:
            return n, MAX_STEPS
        steps += 1
        remaining = abs(s_end - s)
        last = False
        if h >= remaining:
            h = remaining
            last = True
        if h < 1e-14 * max(abs(s), 1e-300):
            return n, BLOWUP
        hs = direction * h
        k2a, k2b = _rhs(form, s + _C2 * hs, y0 + hs * _A21 * k1a, y1 + hs * _A21 * k1b, a, b, c)
        k3a, k3b = _rhs(form, s + _C3 * hs,
                        y0 + hs * (_A31 * k1a + _A32 * k2a),
                        y1 + hs * (_A31 * k1b + _A32 * k2b), a, b, c)
        k4a, k4b = _rhs(form, s + _C4 * hs,
                        y0 + hs * (_A41 * k1a + _A42 * k2a + _A43 * k3a),
                        y1 + hs * (_A41 * k1b + _A42 * k2b + _A43 * k3b), a, b, c)
        k5a, k5b = _rhs(form, s + _C5 * hs,
                        y0 + hs * (_A51 * k1a + _A52 * k2a + _A53 * k3a + _A54 * k4a),
                        y1 + hs * (_A51 * k1b + _A52 * k2b + _A53 * k3b + _A54 * k4b), a, b, c)
        k6a, k6b = _rhs(form, s + hs,
                        y0 + hs * (_A61 * k1a + _A62 * k2a + _A63 * k3a + _A64 * k4a + _A65 * k5a),
                        y1 + hs * (_A61 * k1b + _A62 * k2b + _A63 * k3b + _A64 * k4b + _A65 * k5b),
                        a, b, c)
        n0 = y0 + hs * (_B1 * k1a + _B3 * k3a + _B4 * k4a + _B5 * k5a + _B6 * k6a)
        n1 = y1 + hs * (_B1 * k1b + _B3 * k3b + _B4 * k4b + _B5 * k5b + _B6 * k6b)
        s_new = s_end if last else s + hs
        k7a, k7b = _rhs(form, s_new, n0, n1, a, b, c)
        if not (math.isfinite(n0) and math.isfinite(n1) and math.isfinite(k7a) and math.isfinite(k7b)):
            # treat as a failed step; shrink hard
            h *= 0.1
            rejected_last = True
            continue
        e0 = hs * (_E1 * k1a + _E3 * k3a + _E4 * k4a + _E5 * k5a + _E6 * k6a + _E7 * k7a)
        e1 = hs * (_E1 * k1b + _E3 * k3b + _E4 * k4b + _E5 * k5b + _E6 * k6b + _E7 * k7b)
        sc0 = atol + rtol * max(abs(y0), abs(n0))
        sc1 = atol + rtol * max(abs(y1), abs(n1))
        err = math.sqrt(0.5 * ((e0 / sc0) ** 2 + (e1 / sc1) ** 2))
        if err <= 1.0:
            s = s_new
            y0 = n0
            y1 = n1
            k1a = k7a
            k1b = k7b
            out_s[n] = s
            out_y0[n] = y0
            out_y1[n] = y1
            n += 1
            code = _classify(stop_mode, form, s, y0, y1, a, b, c)
            if code != OK:
                return n, code
            if abs(y0) > 1e150 or abs(y1) > 1e150:
                return n, BLOWUP
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            if rejected_last:
                fac = min(fac, 1.0)
            h *= fac
            rejected_last = False
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
            rejected_last = True
    return n, OK


# ---------------------------------------------------------------------------
# Monte Carlo liquidation
# ---------------------------------------------------------------------------


@njit(cache=True)
def _policy_rate(y, z, eta, log_x0, inv_dlog, table, n_tab, k_asym, du_inf, const_frac):
    """Sale rate f(y, z).  ``const_frac > 0`` selects the constant benchmark policy."""
    if const_frac > 0.0:
        return const_frac * y / eta
    x = eta * z / y
    if x <= 0.0:
        return 0.0
    pos = (math.log(x) - log_x0) * inv_dlog
    if pos < 0.0:
        du = 1.0 - k_asym * math.sqrt(x)
    elif pos >= n_tab - 1:
        du = du_inf
    else:
        i = int(pos)
        w = pos - i
        du = table[i] * (1.0 - w) + table[i + 1] * w
    return y * (1.0 - du) / (2.0 * eta)


@njit(cache=True)
def _advance_path(y, z, s, rev, normals, col, n_steps, dt, sqdt, lam, sigma, rstar, rho, eta,
                  log_x0, inv_dlog, table, n_tab, k_asym, du_inf, const_frac, sign):
    """Advance one path through a block of normals.  Returns the updated state
    and a flag telling whether the path has stopped (z hit 0)."""
    for j in range(n_steps):
        f = _policy_rate(y, z, eta, log_x0, inv_dlog, table, n_tab, k_asym, du_inf, const_frac)
        if f < 0.0:
            f = 0.0
        dz = (rstar * z - f) * dt
        done = False
        if z + dz <= 0.0:
            # sell exactly what is left in this step
            f = z * (1.0 + rstar * dt) / dt
            done = True
        rev += math.exp(-rho * s) * f * (y - eta * f) * dt
        if done:
            return y, 0.0, s + dt, rev, True
        z += dz
        y *= 1.0 + lam * dt + sigma * sqdt * sign * normals[j, col]
        s += dt
    return y, z, s, rev, False


@njit(cache=True, parallel=True)
def mc_block(ys, zs, ss, revs, alive, cols, normals, dt, lam, sigma, rstar, rho, eta,
             log_x0, inv_dlog, table, k_asym, du_inf, const_frac):
    """Advance all live paths by one block of steps.

    Paths come in antithetic pairs: path ``2p`` uses ``normals[:, cols[2p]]``
    and path ``2p + 1`` the negation of the same column.  The assignment of
    columns is made by the caller, so results do not depend on threading.
    """
    n_steps = normals.shape[0]
    n_tab = table.shape[0]
    sqdt = math.sqrt(dt)
    for p in prange(ys.shape[0]):
        if not alive[p]:
            continue
        sign = 1.0 if p % 2 == 0 else -1.0
        y, z, s, rev, done = _advance_path(ys[p], zs[p], ss[p], revs[p], normals, cols[p], n_steps,
                                           dt, sqdt, lam, sigma, rstar, rho, eta, log_x0, inv_dlog,
                                           table, n_tab, k_asym, du_inf, const_frac, sign)
        ys[p] = y
        zs[p] = z
        ss[p] = s
        revs[p] = rev
        if done:
            alive[p] = False


def mc_block_numpy(ys, zs, ss, revs, alive, cols, normals, dt, lam, sigma, rstar, rho, eta,
                   log_x0, inv_dlog, table, k_asym, du_inf, const_frac):
    """Vectorised twin of :func:`mc_block` (same arithmetic, all paths at once)."""
    n_tab = table.shape[0]
    sqdt = math.sqrt(dt)
    sign = np.where(np.arange(ys.shape[0]) % 2 == 0, 1.0, -1.0)
    for j in range(normals.shape[0]):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            return
        y, z, s = ys[idx], zs[idx], ss[idx]
        if const_frac > 0.0:
            f = const_frac * y / eta
        else:
            x = eta * z / y
            with np.errstate(divide="ignore", invalid="ignore"):
                pos = (np.log(np.where(x > 0, x, 1.0)) - log_x0) * inv_dlog
            i = np.clip(pos.astype(np.int64), 0, n_tab - 2)
            w = pos - i
            du = table[i] * (1.0 - w) + table[i + 1] * w
            du = np.where(pos < 0.0, 1.0 - k_asym * np.sqrt(np.maximum(x, 0.0)), du)
            du = np.where(pos >= n_tab - 1, du_inf, du)
            f = np.where(x > 0.0, y * (1.0 - du) / (2.0 * eta), 0.0)
        f = np.maximum(f, 0.0)
        dz = (rstar * z - f) * dt
        done = z + dz <= 0.0
        f = np.where(done, z * (1.0 + rstar * dt) / dt, f)
        revs[idx] += np.exp(-rho * s) * f * (y - eta * f) * dt
        zs[idx] = np.where(done, 0.0, z + dz)
        ss[idx] = s + dt
        ys[idx] = np.where(done, y, y * (1.0 + lam * dt + sigma * sqdt * sign[idx] * normals[j, cols[idx]]))
        alive[idx[done]] = False


def run_mc_block(*args):
    if NUMBA_ENABLED:
        mc_block(*args)
    else:
        mc_block_numpy(*args)
