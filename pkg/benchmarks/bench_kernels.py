"""Compiled kernels against the pure-numpy fallback.

Each backend runs in its own interpreter because LIQODE_DISABLE_NUMBA is read
at import. The parent solves the market trace once and both children load it,
so the Monte Carlo workload is identical.

    python benchmarks/bench_kernels.py [--repeat 3] [--paths 2000]
"""

import argparse
import json
import os
import subprocess
import sys
import tempfile
import time

CHILD = r"""
import json, sys, time
from liqode import ModelParams, integrate, solve_local
from liqode._jit import NUMBA_ENABLED
from liqode.finance import MarketParams, simulate_revenue
from liqode.solver import GridSolution

trace, repeat, paths = sys.argv[1], int(sys.argv[2]), int(sys.argv[3])
sol = GridSolution.from_dict(json.load(open(trace)))
m = MarketParams(0.0, 0.2, 0.0, 0.1, 1.0)
p = ModelParams(1.0, 1.0, 1.0)

def best(fn):
    out = fn()  # warm-up, includes compilation when numba is on
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times), out

res = {"numba": NUMBA_ENABLED}
t, loc = best(lambda: solve_local(p, 1e-3, 1.0, 0.5))
res["solve_local"] = [t, float(loc.meta["slope"])]
t, tr = best(lambda: integrate(p, (1.0, 0.5, loc.meta["slope"]), 2e-3, tol=1e-10))
res["integrate"] = [t, float(tr.u[0])]
t, est = best(lambda: simulate_revenue(sol, m, 1.0, 0.5, n_paths=paths, dt=1e-2, horizon=30.0, seed=1))
res["mc"] = [t, est.mean]
json.dump(res, sys.stdout)
"""


def run_child(trace, disable, repeat, paths):
    env = dict(os.environ)
    env.pop("LIQODE_DISABLE_NUMBA", None)
    if disable:
        env["LIQODE_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", CHILD, trace, str(repeat), str(paths)], env=env,
                         capture_output=True, text=True, check=True)
    return json.loads(out.stdout)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--paths", type=int, default=2000)
    args = ap.parse_args()

    from liqode import solve_global
    from liqode.finance import MarketParams, map_market

    with tempfile.TemporaryDirectory() as tmp:
        trace = os.path.join(tmp, "trace.json")
        t0 = time.perf_counter()
        solve_global(map_market(MarketParams(0.0, 0.2, 0.0, 0.1, 1.0))).solution.write_json(trace)
        print(f"market trace solved in {time.perf_counter() - t0:.2f}s (numba)")
        jit = run_child(trace, False, args.repeat, args.paths)
        py = run_child(trace, True, args.repeat, args.paths)

    print(f"{'workload':<12}{'numba [s]':>12}{'numpy [s]':>12}{'speed-up':>10}{'max rel diff':>14}")
    for key in ("integrate", "solve_local", "mc"):
        (tj, vj), (tp, vp) = jit[key], py[key]
        diff = abs(vj - vp) / max(abs(vp), 1e-300)
        print(f"{key:<12}{tj:>12.4f}{tp:>12.4f}{tp / tj:>10.1f}{diff:>14.1e}")


if __name__ == "__main__":
    main()
