import csv
import json
import math

import numpy as np
import pytest

from liqode.core import (
    ArgumentError,
    DomainError,
    ModelParams,
    PrecisionError,
    RegimeError,
    ode_ddu,
)
from liqode.solver import (
    GridSolution,
    TransformedState,
    continue_to_zero,
    integrate,
    nonexistence_probe,
    series_start,
    solve_global,
    solve_local,
)

P111 = ModelParams(1, 1, 1)


def rk4_log(params, x0, u0, du0, x1, n):
    """Fixed-step classical RK4 in t = ln x; independent of the library integrator."""
    t0, t1 = math.log(x0), math.log(x1)
    h = (t1 - t0) / n

    def f(t, y):
        x = math.exp(t)
        return np.array([x * y[1], x * ode_ddu(params, x, y[0], y[1])])

    y, t = np.array([u0, du0]), t0
    for _ in range(n):
        k1 = f(t, y)
        k2 = f(t + h / 2, y + h / 2 * k1)
        k3 = f(t + h / 2, y + h / 2 * k2)
        k4 = f(t + h, y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


# integrate -----------------------------------------------------------------

def test_integrate_line():
    sol = integrate(ModelParams(1, -1, 1), (1.0, 1.0, 1.0), 5.0, tol=1e-10)
    assert sol.x_max == pytest.approx(5.0)
    assert np.max(np.abs(sol.u - sol.xs)) < 1e-12
    assert np.max(np.abs(sol.du - 1.0)) < 1e-12


def test_integrate_stationary():
    sol = integrate(ModelParams(1, 2, 1), (1.0, 0.5, 0.0), 100.0, tol=1e-10)
    assert sol.x_max > 10  # crosses into the log-variable form
    assert np.max(np.abs(sol.u - 0.5)) < 1e-12
    assert np.max(np.abs(sol.du)) < 1e-12


def test_integrate_backward_matches_fixed_step_oracle(g111):
    sol = g111.solution
    u1, du1 = sol(1.0, 0), sol(1.0, 1)
    tr = integrate(P111, (1.0, u1, du1), 1e-4, tol=1e-12)
    ref = rk4_log(P111, 1.0, u1, du1, 1e-4, 20000)
    assert tr.u[0] == pytest.approx(ref[0], rel=1e-8)
    assert tr.du[0] == pytest.approx(ref[1], rel=1e-8)


def test_forward_from_series_seed_escapes():
    # local solutions separate like exp(-4ck/sqrt x); forward from a seed the
    # truncation error is amplified by exp(4ck/sqrt x_s) and the shot escapes
    x, u, du = series_start(P111, 3, 1e-4)
    tr = integrate(P111, (x, u, du), 1.0, tol=1e-12, stop="escape")
    assert tr.meta["stop"] in ("escape_above", "escape_below")
    assert tr.x_max < 1.0


def test_integrate_errors():
    with pytest.raises(DomainError):
        integrate(P111, (0.0, 0.0, 1.0), 1.0)
    with pytest.raises(DomainError):
        integrate(P111, (1.0, 0.0, 1.0), -1.0)
    with pytest.raises(ArgumentError):
        integrate(P111, (1.0, 0.5, 0.5), 2.0, tol=0)


def test_tolerance_refinement():
    sol_ref = solve_global(P111).solution
    u1, du1 = sol_ref(1.0, 0), sol_ref(1.0, 1)
    for tol in (1e-6, 1e-8, 1e-10):
        a = integrate(P111, (1.0, u1, du1), 1e-6, tol=tol)
        b = integrate(P111, (1.0, u1, du1), 1e-6, tol=tol / 32)
        assert np.max(np.abs(a.u - b(a.xs))) < tol


# GridSolution ----------------------------------------------------------------

def test_grid_solution_invariants(g111):
    sol = g111.solution
    assert sol.residual_ok()
    np.testing.assert_allclose(sol.ddu, ode_ddu(sol.params, sol.xs, sol.u, sol.du), rtol=0, atol=0)
    assert np.all(np.diff(sol.xs) > 0)


def test_grid_solution_dense_output(g111):
    sol = g111.solution
    i = len(sol.xs) // 2
    assert sol(sol.xs[i]) == sol.u[i]
    assert sol(sol.xs[i], 1) == pytest.approx(sol.du[i], rel=1e-14)
    xm = math.sqrt(sol.xs[i] * sol.xs[i + 1])
    assert sol.x_min < xm < sol.x_max
    with pytest.raises(DomainError):
        sol(sol.x_min / 2)
    with pytest.raises(ArgumentError):
        sol(1.0, 3)


def test_grid_solution_validation():
    p = P111
    with pytest.raises(DomainError):
        GridSolution([0.0, 1.0], [0, 1], [1, 1], p, "raw_ivp", 1e-10)
    with pytest.raises(ArgumentError):
        GridSolution([1.0, 1.0], [0, 1], [1, 1], p, "raw_ivp", 1e-10)
    with pytest.raises(ArgumentError):
        GridSolution([1.0], [0], [1], p, "raw_ivp", 1e-10)


def test_serialisation_roundtrip(tmp_path, g111):
    sol = g111.solution
    sol.write_json(tmp_path / "s.json")
    back = GridSolution.from_dict(json.load(open(tmp_path / "s.json")))
    assert np.array_equal(back.xs, sol.xs) and np.array_equal(back.u, sol.u) and np.array_equal(back.du, sol.du)
    assert json.load(open(tmp_path / "s.json"))["schema_version"] == "1"
    sol.write_csv(tmp_path / "s.csv")
    rows = list(csv.reader(open(tmp_path / "s.csv")))
    assert rows[0] == ["x", "u", "du", "ddu"]
    assert np.array_equal(np.array([float(r[1]) for r in rows[1:]]), sol.u)


def test_transformed_state():
    ts = TransformedState.from_x(2.5, 1.2, 0.3)
    assert ts.t == math.log(2.5) and ts.vt == pytest.approx(0.75)
    x, u, du = ts.to_x()
    assert (x, u, du) == pytest.approx((2.5, 1.2, 0.3), rel=1e-15)


# series seed -------------------------------------------------------------------

def test_series_start_examples():
    x, u, du = series_start(ModelParams(0.5, 0.5, 1), 1, 1e-6)
    assert x == 1e-6
    assert u == pytest.approx(1e-6 - 2 / 3 * 1e-9, rel=1e-14)
    assert du == pytest.approx(1 - 1e-3, rel=1e-14)


def test_series_start_slope_tends_to_one():
    p = ModelParams(2, 3, 12.5)
    gaps = [abs(series_start(p, 1, x)[2] - 1) for x in (1e-7, 1e-9, 1e-11)]
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] < 1e-3


def test_series_start_precision_error():
    with pytest.raises(PrecisionError) as err:
        series_start(P111, 3, 0.5)
    assert err.value.suggested is not None and err.value.suggested < 0.5
    series_start(P111, 3, err.value.suggested)


def test_series_start_auto():
    x, u, du = series_start(P111, 3)
    assert 1e-9 <= x <= 1e-6


# local solutions -----------------------------------------------------------------

@pytest.mark.parametrize("u0", [0.0, 1.0, 0.5])
def test_solve_local_boundary_values(u0):
    s = solve_local(P111, 1e-3, 1.0, u0)
    assert abs(s.u[0]) < 1e-12 and s.x_min == pytest.approx(1e-3)
    assert s.u[-1] == pytest.approx(u0, abs=1e-14)
    assert np.all(s.u >= -1e-12) and np.all(s.u <= s.xs + 1e-12)
    assert s.method == "local_bvp"


def test_solve_local_cauchy_in_eps():
    a = solve_local(P111, 1e-3, 1.0, 0.5)
    b = solve_local(P111, 1e-4, 1.0, 0.5)
    c = solve_local(P111, 1e-5, 1.0, 0.5)
    d1, d2 = abs(a(0.5) - b(0.5)), abs(b(0.5) - c(0.5))
    assert d2 < 0.2 * d1


def test_solve_local_errors():
    with pytest.raises(ArgumentError):
        solve_local(P111, 1.0, 1.0, 0.5)
    with pytest.raises(ArgumentError):
        solve_local(P111, 1e-3, 1.0, 1.5)
    with pytest.raises(RegimeError):
        solve_local(ModelParams(0, -1, 1), 1e-3, 1.0, 0.5)


def test_continue_to_zero_converges():
    s = continue_to_zero(P111, 1.0, 0.5, [1e-2, 1e-3, 1e-4, 1e-5], tol=1e-4)
    hist = s.meta["convergence"]
    assert [h["eps"] for h in hist] == [1e-3, 1e-4, 1e-5]
    assert hist[-1]["sup_diff"] < hist[0]["sup_diff"]


def test_continue_to_zero_multiplicity():
    seq = [1e-2, 1e-3, 1e-4, 1e-5]
    s = continue_to_zero(P111, 1.0, 0.2, seq, tol=1e-4)
    t = continue_to_zero(P111, 1.0, 0.8, seq, tol=1e-4)
    gap = abs(s(0.5) - t(0.5))
    noise = max(s.meta["convergence"][-1]["sup_diff"], t.meta["convergence"][-1]["sup_diff"])
    assert gap > 100 * noise


def test_continue_to_zero_errors():
    with pytest.raises(RegimeError):
        continue_to_zero(ModelParams(0, -1, 1), 1.0, 0.5)
    with pytest.raises(ArgumentError):
        continue_to_zero(P111, 1.0, 0.5, [1e-3, 1e-2])
    with pytest.raises(ArgumentError):
        continue_to_zero(P111, 1.0, 0.5, [1e-2, 1e-9])


# global solution -------------------------------------------------------------

def test_solve_global_bracket_and_history(g111):
    assert g111.solution.method == "global_shoot"
    lo, hi = g111.bracket
    assert lo <= hi and hi - lo <= 1e-12
    labels = {h["class"] for h in g111.history if "class" in h}
    assert {"escape_above", "escape_below"} <= labels


def test_solve_global_semigroup(g111):
    sol = g111.solution
    tol = sol.tol
    for x0 in (1e-3, 1e-2, 1e-1, 1.0):
        st = sol.state(int(np.searchsorted(sol.xs, x0)))
        r = integrate(P111, (st.x, st.u, st.du), sol.x_min, tol=tol)
        assert np.max(np.abs(r.u - sol(r.xs))) <= 10 * tol
    for x0 in (1.0, 3.0, 10.0):
        st = sol.state(int(np.searchsorted(sol.xs, x0)))
        r = integrate(P111, (st.x, st.u, st.du), 100.0, tol=tol)
        assert np.max(np.abs(r.u - sol(r.xs))) <= 10 * tol


def test_solve_global_unbounded_branch():
    sol = solve_global(ModelParams(2, -1, 1)).solution
    assert np.all(sol.du > 0) and np.all(sol.ddu < 0)
    assert sol.u[-1] > 30  # grows without bound, no stationary level when b < 0


def test_solve_global_linear_exact():
    res = solve_global(ModelParams(1, -1, 1))
    assert res.n_bisections == 0
    assert np.array_equal(res.solution.u, res.solution.xs)


def test_solve_global_regime_error():
    with pytest.raises(RegimeError):
        solve_global(ModelParams(0, -1, 1))


def test_probe_regime_guard():
    with pytest.raises(ArgumentError):
        nonexistence_probe(P111)
