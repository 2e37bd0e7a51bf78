"""Time the numba and pure-numpy rolling kernels on identical inputs.

    python3 benchmarks/bench_kernels.py [--repeat 3]

Prints one line per case with the best wall time of each backend, the
speedup and the largest relative difference between their outputs.
"""

import argparse
import time

import numpy as np

from sorisk import _accel
from sorisk.kernels import rolling_forecasts, trailing_std

CASES = [
    # (label, assets, periods, window, optimized, fixed)
    ("asset N=10 T=20", 10, 1500, 20, 1, 1),
    ("asset N=50 T=100", 50, 1500, 100, 1, 1),
    ("asset N=100 T=250", 100, 1500, 250, 1, 1),
    ("factor K=20 T=156 P=500", 20, 677, 156, 500, 500),
]


def best_time(fn, repeat):
    best = np.inf
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if not _accel.NUMBA_AVAILABLE:
        print("numba is not installed; nothing to compare")
        return 0
    rng = np.random.default_rng(0)
    print(f"{'case':28s} {'numpy [s]':>10s} {'numba [s]':>10s} {'speedup':>8s} {'max rel diff':>12s}")
    for label, n, length, window, p_opt, p_fix in CASES:
        values = 0.01 * rng.standard_normal((n, length))
        opt = rng.standard_normal((n, p_opt))
        fix = rng.standard_normal((n, p_fix))
        run = lambda b: rolling_forecasts(values, window, opt, fix, demean=True, backend=b)
        run("numba")  # compile outside the timing
        t_np, out_np = best_time(lambda: run("numpy"), args.repeat)
        t_nb, out_nb = best_time(lambda: run("numba"), args.repeat)
        diff = max(float(np.nanmax(np.abs(out_np[k] - out_nb[k]) / (1e-300 + np.abs(out_np[k]))))
                   for k in out_np if k != "counts")
        print(f"{label:28s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {diff:12.2e}")
    z = rng.standard_normal((5000, 500))
    trailing_std(z, 52, backend="numba")
    t_np, a = best_time(lambda: trailing_std(z, 52, backend="numpy"), args.repeat)
    t_nb, b = best_time(lambda: trailing_std(z, 52, backend="numba"), args.repeat)
    diff = float(np.nanmax(np.abs(a - b)))
    print(f"{'trailing std 5000x500 w=52':28s} {t_np:10.4f} {t_nb:10.4f} {t_np / t_nb:8.1f} {diff:12.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
