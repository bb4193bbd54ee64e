"""Time the enumeration and band kernels with and without numba.

Each backend runs in its own interpreter because the switch is read at
import time:

    python benchmarks/bench_kernels.py            # both, side by side
    python benchmarks/bench_kernels.py --worker   # one backend, env decides
"""
import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

SIZES = (4, 5, 6, 7)
BAND_SIZES = (10, 50, 200)


def best_of(fn, repeat):
    fn()  # warm-up, includes numba compilation
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


def worker(repeat):
    from seglatent import kernels
    from seglatent._accel import HAS_NUMBA

    backend = "numba" if HAS_NUMBA else "numpy"
    rng = np.random.default_rng(0)
    out = {"backend": backend, "tree": {}, "band": {}}
    for n in SIZES:
        edge, root = rng.random((n, n)), rng.random(n)
        out["tree"][n] = best_of(lambda: kernels.arborescence_sums(edge, root, backend=backend), repeat)
    for n in BAND_SIZES:
        lp = np.array([rng.integers(0, i + 1) for i in range(n)])
        rp = np.array([rng.integers(i, n) for i in range(n)])
        out["band"][n] = best_of(lambda: kernels.band(lp, rp, backend=backend), repeat * 20)
    print(json.dumps(out))


def run_backend(flag, repeat):
    env = dict(os.environ, SEGLATENT_NUMBA=flag)
    proc = subprocess.run(
        [sys.executable, __file__, "--worker", "--repeat", str(repeat)],
        env=env,
        capture_output=True,
        text=True,
        check=True,
    )
    return json.loads(proc.stdout.strip().splitlines()[-1])


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--worker", action="store_true")
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if args.worker:
        worker(args.repeat)
        return
    fast, slow = run_backend("1", args.repeat), run_backend("0", args.repeat)
    print(f"{'kernel':<22} {fast['backend'] + ' (ms)':>14} {'numpy (ms)':>12} {'speedup':>8}")
    for kind, sizes in (("tree", SIZES), ("band", BAND_SIZES)):
        for n in sizes:
            a, b = fast[kind][str(n)], slow[kind][str(n)]
            print(f"{kind + ' n=' + str(n):<22} {a * 1e3:>14.3f} {b * 1e3:>12.3f} {b / a:>7.1f}x")


if __name__ == "__main__":
    main()
