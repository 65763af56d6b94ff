"""Command-line entry point.

Exit codes: 0 all checks pass, 2 precondition or regime rejection,
3 numerical failure (including a failed check).
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import bounds, finance, properties, series, solver
from ._jit import set_threads
from .core import ArgumentError, LiqodeError, ModelParams, Regime, RegimeError

EXIT_OK, EXIT_PRECONDITION, EXIT_NUMERIC = 0, 2, 3

COMMANDS = ("solve-global", "family", "nonexist", "series", "envelopes", "finance-mc")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_posint = {"type": "integer", "minimum": 1}

CONFIG_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "command": {"enum": list(COMMANDS)},
        "a": _num, "b": _num, "c": _pos,
        "xmax": _pos, "xs": _pos, "eps_min": _pos, "tol": _pos,
        "out": {"type": "string"},
        "seed": {"type": "integer", "minimum": 0},
        "threads": _posint,
        "x0": _pos,
        "u0": {"type": "array", "items": _num, "minItems": 1},
        "xbar": _pos, "u_bar": _num,
        "n": _posint, "dps": _posint,
        "lam": _num, "sigma": _pos, "rstar": _num, "rho": _pos, "eta": _pos,
        "y0": _pos, "z0": {"type": "number", "minimum": 0},
        "n_paths": _posint, "dt": _pos, "horizon": _pos,
        "const_frac": {"type": "number", "minimum": 0},
    },
}

DEFAULTS = {
    "xmax": 1e4, "tol": None, "out": "liqode-out", "seed": 0, "eps_min": None,
    "x0": 1.0, "u0": [0.3, 0.5, 0.7], "xbar": 1.0, "u_bar": 1e-3, "n": 20,
    "y0": 1.0, "z0": 0.5, "n_paths": 100_000, "dt": 1e-3, "horizon": 200.0, "const_frac": 0.0,
}


class PreconditionError(Exception):
    pass


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(solver._jsonable(obj), fh, indent=1)
        fh.write("\n")


def _params(cfg) -> ModelParams:
    try:
        return ModelParams(float(cfg["a"]), float(cfg["b"]), float(cfg["c"]))
    except KeyError as exc:
        raise PreconditionError(f"missing coefficient {exc.args[0]}") from None
    except ArgumentError as exc:
        raise PreconditionError(str(exc)) from None


def _require_rich_or_linear(p: ModelParams):
    if p.regime is Regime.NO_SOLUTION:
        raise PreconditionError(f"no solution exists for a+b<0 (a+b={p.a + p.b!r})")


def cmd_solve_global(cfg) -> int:
    p = _params(cfg)
    _require_rich_or_linear(p)
    out = Path(cfg["out"])
    res = solver.solve_global(p, x_s=cfg.get("xs"), X_max=cfg["xmax"], tol=cfg["tol"] or 1e-12)
    sol = res.solution
    sol.write_csv(out / "solution.csv")
    sol.write_json(out / "solution.json", arrays=False)
    _write_json(out / "shooting.json", res.to_dict())
    report = {"schema_version": solver.SCHEMA_VERSION, "params": p.as_dict(), "regime": p.regime.value}
    if p.regime is Regime.LINEAR_EXACT:
        report["exact"] = "u=x"
        report["passed"] = True
        _write_json(out / "report.json", report)
        return EXIT_OK
    prof = properties.sign_profile(sol)
    prof.write_violations_csv(out / "violations.csv")
    fit_lo = max(10 * sol.x_min, 1e-5)
    checks = {
        "signs": prof.as_dict(),
        "attack_inequality": properties.attack_inequality(sol).as_dict(),
        "asymptote_fit": properties.asymptote_fit(sol, (fit_lo, 1e-3)).as_dict(),
        "one_root": properties.one_root_check(sol),
        "du_at_zero": properties.du_at_zero_check(sol),
        "du_at_infinity": properties.du_at_infinity_check(sol),
        "trichotomy": properties.trichotomy_check(sol),
        "residual_ok": sol.residual_ok(),
    }
    fit = checks["asymptote_fit"]
    hard = {
        "signs": prof.ok and prof.strict_ok,
        "attack_inequality": checks["attack_inequality"]["holds"],
        "k_hat": abs(fit["coefficients"]["k_hat"] - p.k) <= 0.02 * p.k,
        "one_root": checks["one_root"]["holds"],
        "du_at_zero": checks["du_at_zero"]["holds"],
        "du_at_infinity": checks["du_at_infinity"]["holds"],
        "residual": checks["residual_ok"],
    }
    report.update({"checks": checks, "hard": hard, "passed": all(hard.values())})
    _write_json(out / "report.json", report)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def cmd_family(cfg) -> int:
    p = _params(cfg)
    if p.regime is not Regime.RICH:
        raise PreconditionError(f"a family of local solutions needs a+b>0 (a+b={p.a + p.b!r})")
    x0 = cfg["x0"]
    u0s = list(cfg["u0"])
    for u0 in u0s:
        if not 0 <= u0 <= x0:
            raise PreconditionError(f"u0={u0!r} lies outside [0, x0={x0!r}]")
    out = Path(cfg["out"])
    eps_seq = solver.default_eps_seq(cfg["eps_min"] or 1e-8)
    rows = []
    for j, u0 in enumerate(u0s):
        sol = solver.continue_to_zero(p, x0, u0, eps_seq, tol=cfg["tol"] or 1e-6)
        sol.write_csv(out / f"trace_{j}.csv")
        fit = properties.asymptote_fit(sol)
        rows.append({"u0": u0, "k_hat": fit.coefficients["k_hat"], "fit_range": list(fit.fit_range),
                     "convergence": sol.meta["convergence"]})
    report = {"schema_version": solver.SCHEMA_VERSION, "params": p.as_dict(), "x0": x0, "traces": rows}
    passed = True
    if len(rows) > 1:
        ks = [r["k_hat"] for r in rows]
        spread = (max(ks) - min(ks)) / p.k
        report["k_hat_spread"] = spread
        passed = spread < 0.02
    report["passed"] = passed
    _write_json(out / "family.json", report)
    return EXIT_OK if passed else EXIT_NUMERIC


def cmd_nonexist(cfg) -> int:
    p = _params(cfg)
    if p.regime is not Regime.NO_SOLUTION:
        raise PreconditionError("the nonexistence probe needs a+b<0")
    eps_min = cfg["eps_min"] or 1e-6
    eps_seq = solver.default_eps_seq(eps_min)
    rep = solver.nonexistence_probe(p, cfg["xbar"], eps_seq, u_bar=cfg["u_bar"], tol=cfg["tol"] or 1e-10)
    _write_json(Path(cfg["out"]) / "nonexist.json", rep.as_dict())
    return EXIT_OK if rep.passed else EXIT_NUMERIC


def cmd_series(cfg) -> int:
    p = _params(cfg)
    if p.regime is not Regime.RICH:
        raise PreconditionError(f"the series needs a+b>0 (a+b={p.a + p.b!r})")
    n = cfg["n"]
    out = Path(cfg["out"])
    co = series.coefficients(p, n, dps=cfg.get("dps"))
    series.write_csv(co, out / "coefficients.csv")
    m_max = min(n, 8)
    exact = series.coefficients(p, m_max, dps=max(60, cfg.get("dps") or 0))
    grid = series.dyadic_grid(4, 20)
    orders = [series.residual_order(exact, m, grid).as_dict() for m in range(1, m_max + 1)]
    report = {"schema_version": solver.SCHEMA_VERSION, "params": p.as_dict(), "n": n, "order": orders}
    if n >= 5:
        report["divergence"] = series.divergence_report(co).as_dict()
    report["passed"] = all(o["bounded"] for o in orders)
    _write_json(out / "series.json", report)
    return EXIT_OK if report["passed"] else EXIT_NUMERIC


def cmd_envelopes(cfg) -> int:
    p = _params(cfg)
    if p.regime is not Regime.RICH:
        raise PreconditionError(f"envelopes need a+b>0 (a+b={p.a + p.b!r})")
    out = Path(cfg["out"])
    res = solver.solve_global(p, x_s=cfg.get("xs"), X_max=cfg["xmax"], tol=cfg["tol"] or 1e-12)
    sol = res.solution
    est = bounds.estimate_l(sol)
    grid = np.geomspace(sol.x_min, min(1.0, sol.x_max), 400)
    report = {"schema_version": solver.SCHEMA_VERSION, "params": p.as_dict(), "l": est.as_dict(),
              "thresholds": list(bounds.thresholds(p, est.l))}
    envs = {}
    passed = not est.growing
    for side in ("sub", "super"):
        env = bounds.make_envelope(sol, side, est.l)
        try:
            rep, env = bounds.verify_envelope(env, grid)
            report[side] = {"alpha": env.alpha, **rep.as_dict()}
            passed = passed and rep.stable_under_refinement
        except bounds.EnvelopeInvalidError as exc:
            report[side] = {"alpha": env.alpha, "error": str(exc)}
            passed = False
        envs[side] = env
    bounds.write_envelope_csv(sol, envs["sub"], envs["super"], out / "envelopes.csv")
    report["passed"] = passed
    _write_json(out / "envelopes.json", report)
    return EXIT_OK if passed else EXIT_NUMERIC


def cmd_finance_mc(cfg) -> int:
    try:
        m = finance.MarketParams(cfg["lam"], cfg["sigma"], cfg["rstar"], cfg["rho"], cfg["eta"])
    except KeyError as exc:
        raise PreconditionError(f"missing market parameter {exc.args[0]}") from None
    except ArgumentError as exc:
        raise PreconditionError(str(exc)) from None
    p = finance.map_market(m)
    if p.regime is not Regime.RICH:
        raise PreconditionError(f"mapped parameters {p.as_dict()} are not in the a+b>0 regime")
    out = Path(cfg["out"])
    sol = solver.solve_global(p, X_max=cfg["xmax"], tol=cfg["tol"] or 1e-12).solution
    est = finance.simulate_revenue(sol, m, cfg["y0"], cfg["z0"], n_paths=cfg["n_paths"], dt=cfg["dt"],
                                   horizon=cfg["horizon"], seed=cfg["seed"], const_frac=cfg["const_frac"],
                                   threads=cfg.get("threads"))
    w = finance.value(sol, m, cfg["y0"], cfg["z0"])
    report = {**est.as_dict(), "market": m.as_dict(), "params": p.as_dict(), "value": w,
              "z_score": (est.mean - w) / est.stderr if est.stderr > 0 else None}
    _write_json(out / "mc.json", report)
    return EXIT_OK


_HANDLERS = {
    "solve-global": cmd_solve_global,
    "family": cmd_family,
    "nonexist": cmd_nonexist,
    "series": cmd_series,
    "envelopes": cmd_envelopes,
    "finance-mc": cmd_finance_mc,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="liqode", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", type=Path)
        for flag in ("a", "b", "c", "xmax", "eps-min", "tol", "xs"):
            sp.add_argument(f"--{flag}", type=float, default=None)
        sp.add_argument("--out", default=None)
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        if name == "family":
            sp.add_argument("--x0", type=float, default=None)
            sp.add_argument("--u0", type=float, nargs="+", default=None)
        if name == "nonexist":
            sp.add_argument("--xbar", type=float, default=None)
            sp.add_argument("--u-bar", type=float, default=None)
        if name == "series":
            sp.add_argument("--n", type=int, default=None)
            sp.add_argument("--dps", type=int, default=None)
        if name == "finance-mc":
            for flag in ("lam", "sigma", "rstar", "rho", "eta", "y0", "z0", "dt", "horizon", "const-frac"):
                sp.add_argument(f"--{flag}", type=float, default=None)
            sp.add_argument("--n-paths", type=int, default=None)
    return ap


def resolve_config(args) -> dict:
    """Config file values, overridden by flags, validated against one schema."""
    cfg = {}
    if args.config is not None:
        with open(args.config) as fh:
            cfg = json.load(fh)
        if not isinstance(cfg, dict):
            raise PreconditionError("config must be a JSON object")
        if cfg.get("command", args.command) != args.command:
            raise PreconditionError(f"config is for command {cfg['command']!r}, not {args.command!r}")
    for key, val in vars(args).items():
        if key in ("config", "command") or val is None:
            continue
        cfg[key] = val
    cfg["command"] = args.command
    try:
        jsonschema.validate(cfg, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise PreconditionError(f"invalid configuration: {exc.message}") from None
    merged = dict(DEFAULTS)
    merged.update(cfg)
    return merged


def _setup_logging():
    level = os.environ.get("SOLVER_LOG", "error").strip().lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _setup_logging()
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        set_threads(cfg.get("threads"))
        Path(cfg["out"]).mkdir(parents=True, exist_ok=True)
        return _HANDLERS[args.command](cfg)
    except (PreconditionError, RegimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except (LiqodeError, FloatingPointError, OverflowError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
