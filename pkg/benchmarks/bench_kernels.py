"""Compare the compiled and pure-Python integration kernels.

Usage: python benchmarks/bench_kernels.py [--minutes N] [--repeat R]

Each kernel integrates N one-minute Euler substeps of a nominal patient with a
varying insulin input and two meals. Both backends must produce identical
trajectories; the script checks that before timing.
"""

import argparse
import time

import numpy as np

from apstestbed import _kernels_py, mvp, uva
from apstestbed.units import MICROUNITS_PER_UNIT, PMOL_PER_UNIT

try:
    from apstestbed import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def _inputs(minutes):
    rng = np.random.default_rng(0)
    doses = rng.uniform(0.0, 0.05, size=minutes)  # U/min
    meals_t = np.array([-60.0, -400.0])
    meals_mg = np.array([50e3, 70e3])
    return doses, meals_t, meals_mg


def run_mvp(kernels, minutes):
    doses, t, g = _inputs(minutes)
    s = mvp.initial_state(mvp.NOMINAL, 120.0, 1.0)
    y = np.array([s.i_sc, s.i_p, s.i_eff, s.bg])
    out = np.empty(minutes)
    kernels.mvp_integrate(y, mvp.NOMINAL.as_array(), doses * MICROUNITS_PER_UNIT, 1.0, t.copy(), g, out)
    return out


def run_uva(kernels, minutes):
    doses, t, g = _inputs(minutes)
    y = uva.initial_state(uva.NOMINAL, 120.0).as_array()
    out = np.empty(minutes)
    kernels.uva_integrate(y, uva.NOMINAL.as_array(), doses * PMOL_PER_UNIT, 1.0, t.copy(), g, False, out)
    return out


def run_cascade(kernels, minutes):
    doses, _, _ = _inputs(minutes)
    p = mvp.NOMINAL
    y = np.full(3, 1000.0)
    out = np.empty(minutes)
    kernels.insulin_cascade(y, np.array([p.c_i, p.tau_1, p.tau_2, p.p_2, 1.0]), doses * MICROUNITS_PER_UNIT, 1.0, out)
    return out


CASES = {"mvp_integrate": run_mvp, "uva_integrate": run_uva, "insulin_cascade": run_cascade}


def best_of(fn, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--minutes", type=int, default=14400)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)

    if _kernels_c is None:
        print("compiled kernels not built; only the pure-Python backend is available")
    print(f"{'kernel':<18}{'python s':>12}{'cython s':>12}{'speedup':>10}  identical")
    for name, fn in CASES.items():
        t_py = best_of(lambda: fn(_kernels_py, args.minutes), args.repeat)
        if _kernels_c is None:
            print(f"{name:<18}{t_py:>12.4f}{'-':>12}{'-':>10}  -")
            continue
        same = np.array_equal(fn(_kernels_py, args.minutes), fn(_kernels_c, args.minutes))
        t_c = best_of(lambda: fn(_kernels_c, args.minutes), args.repeat)
        print(f"{name:<18}{t_py:>12.4f}{t_c:>12.6f}{t_py / t_c:>10.1f}  {same}")


if __name__ == "__main__":
    main()
