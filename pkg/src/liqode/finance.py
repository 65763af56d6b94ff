"""Optimal liquidation under linear price impact.

The investor sells at rate f from an inventory z while the price y follows a
geometric Brownian motion with drift lam and volatility sigma; inventory
grows at rate rstar and the realised price is y - eta f.  Discounted revenue
at rate rho is maximised until z reaches 0.  With x = eta z / y the value
function is w(y, z) = (y^2 / eta) u(x), where u solves the scalar equation
with

    a = 2 (sigma^2 + lam - rstar) / sigma^2
    b = 2 (rho - sigma^2 - 2 lam) / sigma^2
    c = 1 / (2 sigma^2)

and the optimal feedback rate is f* = y (1 - u'(x)) / (2 eta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels as K
from ._jit import set_threads
from .core import ArgumentError, DomainError, ModelParams, Regime
from .solver import GridSolution


class ExtrapolationError(DomainError):
    pass


@dataclass(frozen=True)
class MarketParams:
    lam: float
    sigma: float
    rstar: float
    rho: float
    eta: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ArgumentError("sigma must be > 0")
        if not self.eta > 0:
            raise ArgumentError("eta must be > 0")
        if not self.rho > 0:
            raise ArgumentError("rho must be > 0")

    def as_dict(self):
        return {"lam": self.lam, "sigma": self.sigma, "rstar": self.rstar, "rho": self.rho, "eta": self.eta}


def map_market(m: MarketParams) -> ModelParams:
    s2 = m.sigma ** 2
    return ModelParams(2 * (s2 + m.lam - m.rstar) / s2, 2 * (m.rho - s2 - 2 * m.lam) / s2, 1 / (2 * s2))


def _x_of(u_sol, m, y, z):
    if not y > 0:
        raise ArgumentError("y must be > 0")
    x = m.eta * z / y
    if x < u_sol.x_min * (1 - 1e-14) or x > u_sol.x_max * (1 + 1e-14):
        raise ExtrapolationError(f"x={x:.6g} outside the trace [{u_sol.x_min:.6g}, {u_sol.x_max:.6g}]")
    return x


def value(u_sol: GridSolution, m: MarketParams, y: float, z: float) -> float:
    if z < 0:
        raise ArgumentError("z must be >= 0")
    if z == 0:
        return 0.0
    x = _x_of(u_sol, m, y, z)
    return y * y / m.eta * float(u_sol(x, 0))


def policy(u_sol: GridSolution, m: MarketParams, y: float, z: float) -> float:
    if not z > 0:
        raise ArgumentError("z must be > 0")
    x = _x_of(u_sol, m, y, z)
    return y * (1.0 - float(u_sol(x, 1))) / (2 * m.eta)


def pde_residual_values(u_sol: GridSolution, m: MarketParams, points) -> np.ndarray:
    """Left-hand side of the HJB equation at each (y, z), with the partials
    of w = (y^2/eta) u(eta z / y) written through u, u', u''."""
    out = []
    for y, z in points:
        x = _x_of(u_sol, m, y, z)
        u, du, ddu = (float(u_sol(x, d)) for d in (0, 1, 2))
        w = y * y / m.eta * u
        w_z = y * du
        w_y = y / m.eta * (2 * u - x * du)
        w_yy = (2 * u - 2 * x * du + x * x * ddu) / m.eta
        out.append(0.5 * y * y * m.sigma ** 2 * w_yy + m.lam * y * w_y + m.rstar * z * w_z - m.rho * w
                   + (y - w_z) ** 2 / (4 * m.eta))
    return np.asarray(out)


def pde_residual(u_sol: GridSolution, m: MarketParams, points) -> float:
    return float(np.max(np.abs(pde_residual_values(u_sol, m, points))))


@dataclass(frozen=True)
class MCEstimate:
    mean: float
    stderr: float
    n_paths: int
    dt: float
    horizon: float
    seed: int
    tail_bound: float = 0.0
    n_unfinished: int = 0
    policy: str = "optimal"

    def as_dict(self):
        return {
            "schema_version": "1",
            "mean": self.mean,
            "stderr": self.stderr,
            "n_paths": self.n_paths,
            "dt": self.dt,
            "horizon": self.horizon,
            "seed": self.seed,
            "tail_bound": self.tail_bound,
            "n_unfinished": self.n_unfinished,
            "policy": self.policy,
        }


def _policy_table(u_sol, n):
    lx = np.linspace(math.log(u_sol.x_min), math.log(u_sol.x_max), n)
    table = u_sol(np.clip(np.exp(lx), u_sol.x_min, u_sol.x_max), 1)
    return lx[0], (n - 1) / (lx[-1] - lx[0]), np.ascontiguousarray(table)


def simulate_revenue(u_sol: GridSolution, m: MarketParams, y0: float, z0: float, *, n_paths: int = 100_000,
                     dt: float = 1e-3, horizon: float = 200.0, seed: int = 0, const_frac: float = 0.0,
                     block_steps: int = 256, table_points: int = 8192, threads: int | None = None) -> MCEstimate:
    """Discounted revenue of the feedback policy by Euler-Maruyama.

    Paths come in antithetic pairs and the standard error is taken over pair
    means.  Each block draws normals only for pairs with a live path; the
    draw order is fixed by the seed, so the estimate is reproducible and
    independent of the thread count.  ``const_frac > 0`` replaces the optimal
    policy with f = const_frac * y / eta.
    """
    if not (n_paths > 0 and dt > 0 and horizon > 0):
        raise ArgumentError("n_paths, dt and horizon must be positive")
    if n_paths % 2:
        raise ArgumentError("n_paths must be even (antithetic pairs)")
    label = "optimal" if const_frac <= 0 else f"constant({const_frac:g})"
    if z0 == 0:
        return MCEstimate(0.0, 0.0, n_paths, dt, horizon, seed, 0.0, 0, label)
    if const_frac <= 0:
        u_sol.params.require(Regime.RICH)
    set_threads(threads)
    log_x0, inv_dlog, table = _policy_table(u_sol, table_points)
    k_asym = u_sol.params.k
    du_inf = float(u_sol.du[-1])
    ys = np.full(n_paths, float(y0))
    zs = np.full(n_paths, float(z0))
    ss = np.zeros(n_paths)
    revs = np.zeros(n_paths)
    alive = np.ones(n_paths, dtype=np.bool_)
    cols = np.zeros(n_paths, dtype=np.int64)
    rng = np.random.Generator(np.random.PCG64(seed))
    total = int(math.ceil(horizon / dt - 1e-9))
    done_steps = 0
    while done_steps < total:
        pair_alive = alive[0::2] | alive[1::2]
        live_pairs = np.nonzero(pair_alive)[0]
        if live_pairs.size == 0:
            break
        cols[:] = -1
        cols[2 * live_pairs] = np.arange(live_pairs.size)
        cols[2 * live_pairs + 1] = np.arange(live_pairs.size)
        steps = min(block_steps, total - done_steps)
        normals = rng.standard_normal((steps, live_pairs.size))
        K.run_mc_block(ys, zs, ss, revs, alive, cols, normals, dt, m.lam, m.sigma, m.rstar, m.rho, m.eta,
                       log_x0, inv_dlog, table, k_asym, du_inf, const_frac)
        done_steps += steps
    pair_means = 0.5 * (revs[0::2] + revs[1::2])
    mean = float(revs.mean())
    stderr = float(pair_means.std(ddof=1) / math.sqrt(pair_means.size)) if pair_means.size > 1 else 0.0
    tail = float(np.mean(np.where(alive, np.exp(-m.rho * ss) * ys * zs, 0.0)))
    return MCEstimate(mean, stderr, n_paths, dt, horizon, seed, tail, int(alive.sum()), label)


def discretization_allowance(u_sol: GridSolution, m: MarketParams, y0: float, z0: float, **cfg):
    """|mean(dt) - mean(dt/2)| with everything else fixed; returns the
    allowance and both estimates."""
    coarse = simulate_revenue(u_sol, m, y0, z0, **cfg)
    cfg = dict(cfg)
    cfg["dt"] = coarse.dt / 2
    fine = simulate_revenue(u_sol, m, y0, z0, **cfg)
    return abs(coarse.mean - fine.mean), coarse, fine
