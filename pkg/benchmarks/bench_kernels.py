"""Compare the numba kernels with the pure-numpy fallback.

Part one times each kernel directly from both backend tables in this process.
Part two runs the memory-cycle benchmark end to end in two subprocesses, one
per ``DUALMEM_BACKEND`` value, since the backend is fixed at import time.

    python3 benchmarks/bench_kernels.py [--trials 200] [--capacities 1e4,1e5]
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from dualmem import _kernels


def time_call(fn, repeat=5, number=20):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number * 1e6


def kernel_table(leaves):
    rng = np.random.default_rng(0)
    cap = _kernels._pow2(leaves)
    base = np.zeros(2 * cap)
    base[cap:cap + leaves] = rng.uniform(0.01, 1.0, leaves)
    _kernels.NUMPY_KERNELS["tree_build"](base, cap)
    idx32 = rng.integers(0, leaves, 32)
    vals32 = rng.uniform(0.01, 1.0, 32)
    targets = rng.random(32) * base[1]
    prio = rng.uniform(0.01, 1.0, 2000)
    uni = rng.random(20)

    rows = []
    for name, table in _kernels.BACKENDS.items():
        nodes = base.copy()
        cases = {
            "tree_build": lambda: table["tree_build"](nodes, cap),
            "tree_set x32": lambda: table["tree_set"](nodes, cap, idx32, vals32),
            "tree_find x32": lambda: table["tree_find"](nodes, cap, targets),
            "psmm_draw 20/2000": lambda: table["psmm_draw"](prio, 1.0, uni),
        }
        for case, fn in cases.items():
            fn()  # compile / warm caches
            rows.append((name, case, time_call(fn)))
    return rows


def cycle_bench(backend, capacities, trials):
    env = dict(os.environ, DUALMEM_BACKEND=backend)
    out = {}
    for mode in ("dms", "per", "psmm"):
        res = subprocess.run(
            [sys.executable, "-m", "dualmem", "bench", "--mode", mode, "--capacities", capacities, "--trials", str(trials)],
            env=env, capture_output=True, text=True, check=True,
        )
        for line in res.stdout.splitlines()[1:]:
            m, cap, _, mean, _ = line.split(",")
            out[(m, int(cap))] = float(mean)
    return out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--leaves", type=int, default=100_000)
    ap.add_argument("--capacities", default="1e4,1e5")
    ap.add_argument("--trials", type=int, default=200)
    args = ap.parse_args()

    print(f"kernels on a {args.leaves}-leaf tree (us per call)")
    rows = kernel_table(args.leaves)
    by_case = {}
    for backend, case, us in rows:
        by_case.setdefault(case, {})[backend] = us
    for case, t in by_case.items():
        speedup = t["numpy"] / t["numba"] if "numba" in t else float("nan")
        print(f"  {case:<20} numpy {t['numpy']:10.1f}   numba {t.get('numba', float('nan')):10.1f}   x{speedup:.1f}")

    print("\nmemory cycle, mean us (main capacity -> time)")
    results = {b: cycle_bench(b, args.capacities, args.trials) for b in _kernels.BACKENDS}
    for key in sorted(results["numpy"]):
        line = f"  {key[0]:<5} {key[1]:>8}"
        for b in results:
            line += f"   {b} {results[b][key]:9.1f}"
        print(line)


if __name__ == "__main__":
    main()
