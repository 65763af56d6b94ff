import math

import numpy as np
import pytest

from liqode import ModelParams, integrate, solve_global
from liqode.core import ArgumentError
from liqode.properties import (
    FitError,
    SeparationError,
    asymptote_fit,
    attack_inequality,
    difference_dichotomy,
    du_at_infinity_check,
    du_at_zero_check,
    one_root_check,
    separation_decay,
    sign_profile,
    trichotomy_check,
)
from liqode.solver import GridSolution

from conftest import family_trace, global_solution

P111 = ModelParams(1, 1, 1)


def test_sign_profile_global(g111):
    prof = sign_profile(g111.solution)
    assert prof.ok and prof.strict_ok and not prof.violations
    # far out |u''| drops inside the dead-band, which reads as 0, never +1
    assert {iv[2] for iv in prof.intervals["ddu"]} <= {-1, 0}
    assert prof.intervals["ddu"][0][0] == g111.solution.x_min and prof.intervals["ddu"][0][2] == -1


def test_sign_profile_line():
    line = solve_global(ModelParams(1, -1, 1)).solution
    prof = sign_profile(line)
    assert prof.ok and "ddu" in prof.boundary and not prof.strict_ok


def test_sign_profile_stationary():
    p = ModelParams(1, 2, 1)
    flat = integrate(p, (1.0, 0.5, 0.0), 50.0)
    prof = sign_profile(flat)
    assert prof.ok and "du" in prof.boundary


def test_sign_profile_violations(tmp_path):
    xs = np.linspace(1, 2, 20)
    fake = GridSolution(xs, xs ** 2, 2 * xs, P111, "raw_ivp", 1e-10)
    prof = sign_profile(fake)
    assert not prof.ok
    prof.write_violations_csv(tmp_path / "v.csv")
    assert open(tmp_path / "v.csv").readline().strip() == "quantity,x,value"


def test_asymptote_fit_half_half():
    sol = global_solution(0.5, 0.5, 1.0).solution
    rep = asymptote_fit(sol, (1e-5, 1e-3))
    assert rep.coefficients["k_hat"] == pytest.approx(1.0, rel=0.02)
    assert rep.extra["x32_coef"] == pytest.approx(-2 / 3, rel=0.02)


def test_asymptote_fit_line():
    line = solve_global(ModelParams(1, -1, 1)).solution
    assert asymptote_fit(line, (1e-5, 1e-3)).coefficients["k_hat"] == pytest.approx(0.0, abs=1e-12)


def test_asymptote_fit_default_range(g111):
    rep = asymptote_fit(g111.solution)
    assert rep.fit_range == (10 * g111.solution.x_min, 1e-2)


def test_asymptote_fit_errors(g111):
    with pytest.raises(FitError):
        asymptote_fit(g111.solution, (1e-9, 1e-3))
    with pytest.raises(FitError):
        asymptote_fit(g111.solution, (1e-3, 1e-4))


def test_indistinguishable_asymptotics(family):
    ks = [asymptote_fit(t).coefficients["k_hat"] for t in family.values()]
    assert max(ks) - min(ks) < 1e-3 * P111.k


def test_attack_inequality(g111):
    rep = attack_inequality(g111.solution)
    assert rep.holds and rep.min_margin > 0


def test_attack_inequality_line():
    rep = attack_inequality(solve_global(ModelParams(1, -1, 1)).solution)
    assert rep.boundary and not rep.holds


def test_attack_inequality_negative_control():
    xs = np.linspace(1, 4, 50)
    fake = GridSolution(xs, np.sqrt(xs), 0.5 / np.sqrt(xs), P111, "raw_ivp", 1e-10)
    rep = attack_inequality(fake)
    assert rep.min_margin == pytest.approx(-0.5) and not rep.holds


def test_dichotomy_pair():
    u, v = family_trace(0.4), family_trace(0.6)
    rep = difference_dichotomy(u, v)
    assert rep.one_signed and not rep.identical and rep.n_resolved > 100


def test_dichotomy_identical(family):
    t = family[0.5]
    rep = difference_dichotomy(t, t)
    assert rep.identical and rep.one_signed and rep.sign == 0


def test_dichotomy_global_vs_local(g111):
    g = g111.solution
    loc = family_trace(round(g(1.0) + 1e-3, 12))
    rep = difference_dichotomy(g.restrict(g.x_min, 1.0), loc)
    assert rep.one_signed and not rep.identical
    # the non-global neighbour cannot keep u' -> 0: continued forward it escapes
    st = loc.state(len(loc.xs) - 1)
    fwd = integrate(P111, (st.x, st.u, st.du), 1e4, tol=1e-12, stop="escape")
    assert fwd.meta["stop"] in ("escape_above", "escape_below")


def test_dichotomy_rejects_mixed_params(family):
    other = global_solution(0.5, 0.5, 1.0).solution
    with pytest.raises(ArgumentError):
        difference_dichotomy(family[0.5], other)


def test_separation_decay(family):
    rep = separation_decay(family[0.3], family[0.7])
    assert all(rep.extra["superpoly"][p] for p in (2, 3, 4))
    # the rate itself is exploratory; loose check against 4ck
    assert rep.extra["rel_dev_from_4ck"] < 0.5


def test_separation_decay_identical(family):
    with pytest.raises(SeparationError):
        separation_decay(family[0.5], family[0.5])


def test_one_root(g111):
    assert one_root_check(g111.solution)["holds"]


def test_trichotomy_bounded(g111):
    rep = trichotomy_check(g111.solution)
    assert rep["target"] == 1.0
    # approach to c/b from below, monotone across decades
    sol = g111.solution
    us = [sol(x) for x in (1e1, 1e2, 1e3, 1e4)]
    assert all(u1 < u2 for u1, u2 in zip(us, us[1:])) and us[-1] < 1.0


def test_trichotomy_b_zero():
    sol = global_solution(2.0, 0.0, 1.0).solution
    rep = trichotomy_check(sol)
    assert rep["log_slope"] == pytest.approx(1 / 3, rel=0.1)
    assert rep["holds"]


def test_du_limits(g111):
    sol = g111.solution
    z = du_at_zero_check(sol)
    assert z["holds"] and z["gap"] < 5 * P111.k * math.sqrt(sol.x_min)
    assert du_at_infinity_check(sol)["holds"]
    assert du_at_infinity_check(sol, threshold=sol.tol)["du_end"] > 0
