"""Time every hot kernel on its jitted and plain path, plus one rolling-horizon day.

    python3 benchmarks/bench_kernels.py [--repeat 5] [--json out.json]

Kernel timings run both paths in this process. The rolling day is timed in two
subprocesses, one with ``BRPSIM_DISABLE_NUMBA=1``, so it shows what the switch
does to a real workload.
"""
from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit

import numpy as np

from brpsim import kernels
from brpsim._accel import HAS_NUMBA
from brpsim.fleet import generate_sessions
from brpsim.rtdp import solve_rt_dp


def _envelope_args(n_ev=500, days=7):
    ss = generate_sessions(n_ev, seed=1, days=days, eta=0.95)
    horizon = 96 * (days + 1)
    arr = np.array([s.arrival_isp for s in ss], dtype=np.int64)
    dep = np.array([s.departure_isp for s in ss], dtype=np.int64)
    soc = np.array([s.soc_init for s in ss])
    tgt = np.array([s.e_target for s in ss])
    pmax = np.array([s.p_max for s in ss])
    return arr, dep, soc, tgt, 0.95 * pmax * 0.25, pmax, horizon


def _settle_args(n=100_000):
    rng = np.random.default_rng(0)
    return (rng.integers(0, 3, n), rng.choice([-1, 0, 1, 2], n), rng.normal(0, 20, n),
            rng.normal(80, 50, n), rng.normal(20, 50, n), rng.normal(60, 20, n), False)


def _simplex_args(m=40, n=80):
    rng = np.random.default_rng(1)
    A = rng.normal(size=(m, n))
    T = np.hstack([A, np.eye(m)])
    status = np.zeros(n + m, dtype=np.int64)
    status[n:] = 2
    ub = np.concatenate([rng.uniform(0.5, 2, n), np.full(m, np.inf)])
    cost = np.concatenate([rng.normal(size=n), np.zeros(m)])
    xB = rng.uniform(1, 2, m)
    basis = np.arange(n, n + m)

    def call(f):
        return f(T.copy(), xB.copy(), basis.copy(), status.copy(), ub, cost, 5000, 500)
    return call


def _prs_args(K=96):
    rng = np.random.default_rng(2)
    return (rng.normal(0, 3, K), 0.0, -rng.uniform(0, 20, K), rng.uniform(0, 20, K),
            -rng.uniform(0, 3, K), rng.uniform(0, 3, K), 0.0, True)


def _dp_args(S=25, L=96):
    rng = np.random.default_rng(3)
    c_up = rng.normal(0.05, 0.08, (S, L))
    c_dn = c_up + rng.uniform(0.0, 0.1, (S, L))
    dhi = rng.uniform(0, 10, L)
    dlo = -rng.uniform(0, 10, L)
    cum_hi = np.cumsum(dhi) * 0.5
    cum_lo = np.cumsum(dlo) * 0.5
    cum_hi[-1] = cum_lo[-1] = 0.0
    return 0.0, c_up, c_dn, dlo, dhi, cum_lo, cum_hi, np.full(S, 1.0 / S)


def kernel_cases():
    env = _envelope_args()
    st = _settle_args()
    simplex = _simplex_args()
    prs = _prs_args()
    dp = _dp_args()
    return {
        "envelope (500 EVs, 8 days)": (lambda: kernels.envelope_numba(*env),
                                       lambda: kernels.envelope_numpy(*env)),
        "settle_vector (1e5 ISPs)": (lambda: kernels.settle_numba(*st),
                                     lambda: kernels.settle_numpy(*st)),
        "simplex (40 x 80)": (lambda: simplex(kernels.simplex_numba),
                              lambda: simplex(kernels.simplex_core)),
        "project_running_sum (96)": (lambda: kernels.project_running_sum_numba(*prs),
                                     lambda: kernels.project_running_sum_numpy(*prs)),
        "rt dp solve (25 x 96)": (lambda: solve_rt_dp(*dp, jit=True),
                                  lambda: solve_rt_dp(*dp, jit=False)),
    }


def _best(fn, repeat):
    fn()                                   # compile / warm caches
    number = 1
    while timeit.timeit(fn, number=number) < 0.05 and number < 10_000:
        number *= 4
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


_DAY = """
import time
import numpy as np
from brpsim.fleet import build_virtual_battery, generate_sessions
from brpsim.market import synthesize_market
from brpsim.optimizer import rolling_horizon_day, solve_da_stage
from brpsim.scenarios import da_scenarios
vb = build_virtual_battery(generate_sessions(100, seed=1, days=1, eta=0.95), 192, eta=0.95)
vb = vb.window(48, 144, 0.0)
ms = synthesize_market(2, seed=5)
ep = solve_da_stage(vb, da_scenarios(ms.lambda_da[48:144], 10, 0.2, seed=1), 250.0)
rolling_horizon_day(vb, ep, ms, "single", 250.0)
best = min(
    (lambda t: (rolling_horizon_day(vb, ep, ms, "single", 250.0), time.perf_counter() - t)[1])(
        time.perf_counter()) for _ in range({repeat}))
print(best)
"""


def rolling_day(disable: bool, repeat: int) -> float:
    env = dict(os.environ)
    env.pop("BRPSIM_DISABLE_NUMBA", None)
    if disable:
        env["BRPSIM_DISABLE_NUMBA"] = "1"
    out = subprocess.run([sys.executable, "-c", _DAY.format(repeat=repeat)], env=env,
                         capture_output=True, text=True, check=True)
    return float(out.stdout.split()[-1])


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--json", default=None, help="also write the timings here")
    args = p.parse_args(argv)
    if not HAS_NUMBA:
        sys.exit("numba is not installed; nothing to compare")

    rows = []
    for name, (jit, plain) in kernel_cases().items():
        rows.append((name, _best(jit, args.repeat), _best(plain, args.repeat)))
    rows.append(("rolling-horizon day (100 EVs)", rolling_day(False, max(1, args.repeat // 2)),
                 rolling_day(True, max(1, args.repeat // 2))))

    print(f"{'kernel':<32}{'numba':>12}{'numpy':>12}{'speedup':>10}")
    for name, a, b in rows:
        print(f"{name:<32}{a * 1e3:>10.3f}ms{b * 1e3:>10.3f}ms{b / a:>9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump([dict(kernel=n, numba_s=a, numpy_s=b) for n, a, b in rows], fh, indent=2)


if __name__ == "__main__":
    main()
