"""
Numba vs numpy timings for the two per-event kernels: eFAST corner
detection and the corner density score.

    python3 benchmarks/bench_kernels.py [--events 200000] [--repeat 3]

The numba column is skipped when numba is missing or disabled with
EVORBIT_DISABLE_NUMBA=1. The first numba call (JIT compile) is timed
separately and excluded from the best-of-N figure.
"""
import argparse
import time

import numpy as np

from evorbit import _accel
from evorbit.sim import SimEventConfig, default_orbit, gt_events, make_scene
from evorbit.tracking.density import density_scores
from evorbit.tracking.efast import detect_corners


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def make_stream(n_events, seed):
    # scale the duration so the stream has roughly n_events events
    sc = make_scene("cube_corners", default_orbit(), duration=1.0, seed=seed)
    probe = len(gt_events(sc, SimEventConfig()))
    sc = make_scene("cube_corners", default_orbit(), duration=max(0.05, n_events / probe), seed=seed)
    return gt_events(sc, SimEventConfig())


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[1])
    ap.add_argument("--events", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    stream = make_stream(args.events, args.seed)
    backends = ["numpy"] + (["numba"] if _accel.USE_NUMBA else [])
    print(f"{len(stream)} events, backends: {', '.join(backends)}")
    if not _accel.USE_NUMBA:
        print("numba unavailable or disabled; numpy only")

    results = {}
    for b in backends:
        if b == "numba":
            t0 = time.perf_counter()
            corners = detect_corners(stream, backend=b)
            density_scores(corners, stream, backend=b)
            print(f"numba first call (compile + run): {time.perf_counter() - t0:.2f} s")
        t_efast, corners = best_of(lambda: detect_corners(stream, backend=b), args.repeat)
        t_dens, dens = best_of(lambda: density_scores(corners, stream, backend=b), args.repeat)
        results[b] = (t_efast, t_dens, corners, dens)

    print(f"{'kernel':<10}" + "".join(f"{b:>12}" for b in backends) + ("     speedup" if len(backends) > 1 else ""))
    for i, name in enumerate(("efast", "density")):
        row = f"{name:<10}" + "".join(f"{results[b][i]:>11.3f}s" for b in backends)
        if len(backends) > 1:
            row += f"{results['numpy'][i] / results['numba'][i]:>11.1f}x"
        print(row)
    if len(backends) > 1:
        same = (np.array_equal(results["numpy"][2], results["numba"][2])
                and np.array_equal(results["numpy"][3], results["numba"][3]))
        print(f"outputs identical: {same}")


if __name__ == "__main__":
    main()
