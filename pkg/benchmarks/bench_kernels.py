"""Time the price kernels under both backends on the bundled hourly calibration.

    python3 benchmarks/bench_kernels.py [--grid 512] [--repeat 5]
"""
import argparse
import time

import numpy as np

from deathspiral import _kernels
from deathspiral.io import bundled
from deathspiral.tariff import dynamic_prices, flat_prices


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", type=int, default=512)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    cal = bundled("coned_2015")
    m, am = cal.model, cal.adoption
    theta = cal.defaults["theta"] * 1.05
    R = np.linspace(0, 0.2 * am.market_size, args.grid)
    cases = {
        "max_margin(flat)": lambda: _kernels.max_margin(m.flat_table, R),
        "flat_prices": lambda: flat_prices(m, theta, R),
        "dynamic_prices": lambda: dynamic_prices(m, theta, R),
    }
    backends = ["numpy"] + (["numba"] if _kernels.HAVE_NUMBA else [])
    results = {}
    for name in backends:
        _kernels.set_backend(name)
        for label, fn in cases.items():
            fn()  # compile / warm up
            results[name, label] = best_of(fn, args.repeat)
    print(f"{'kernel':<18}" + "".join(f"{b:>14}" for b in backends) + "   max|diff|")
    for label in cases:
        row = f"{label:<18}" + "".join(f"{results[b, label][0] * 1e3:>12.3f}ms" for b in backends)
        if len(backends) == 2:
            a, b = (np.asarray(results[k, label][1], dtype=float) for k in backends)
            row += f"   {np.nanmax(np.abs(a - b)):.2e}"
        print(row)


if __name__ == "__main__":
    main()
