"""Timing comparison of the kernel backends.

Runs the four hot kernels at tracker-realistic problem sizes against every
importable backend and prints per-call times with the compiled/python
speedup. Workload shapes mirror what CameraTracker actually issues: tens of
boxes per frame, gated rectangular costs, 8-state/4-measurement filters.

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 8,32,128 --repeat 7
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from svs.kernels import available_backends


def make_boxes(rng: np.random.Generator, n: int) -> np.ndarray:
    xy = rng.uniform(0.0, 1800.0, size=(n, 2))
    wh = rng.uniform(20.0, 160.0, size=(n, 2))
    return np.hstack([xy, wh])


def make_cost(rng: np.random.Generator, n: int) -> np.ndarray:
    # Roughly half the cells feasible at the 0.8 gate, like a mid-density
    # frame where most tracks have one plausible detection plus clutter.
    return rng.uniform(0.0, 1.6, size=(n, n))


def make_filter(rng: np.random.Generator):
    mean = rng.normal(size=8)
    a = rng.normal(size=(8, 8))
    cov = a @ a.T + 8.0 * np.eye(8)
    trans = np.eye(8)
    trans[:4, 4:] = np.eye(4)
    q = np.diag(rng.uniform(0.01, 1.0, size=8))
    z = mean[:4] + rng.normal(scale=0.5, size=4)
    r = np.diag(rng.uniform(0.5, 2.0, size=4))
    return mean, cov, trans, q, z, r


def cases(seed: int, sizes: list[int]):
    rng = np.random.default_rng(seed)
    for n in sizes:
        a, b = make_boxes(rng, n), make_boxes(rng, n)
        yield f"iou_matrix      {n:>3}x{n:<3}", lambda mod, a=a, b=b: mod.iou_matrix(a, b)
        c = make_cost(rng, n)
        yield (f"solve_assignment {n:>3}x{n:<3}",
               lambda mod, c=c: mod.solve_assignment(c, 0.8))
    mean, cov, trans, q, z, r = make_filter(rng)
    yield ("kalman_predict   8-state",
           lambda mod: mod.kalman_predict(mean, cov, trans, q))
    yield ("kalman_update    8/4", lambda mod: mod.kalman_update(mean, cov, z, r))


def per_call_us(fn, repeat: int) -> float:
    timer = timeit.Timer(fn)
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number * 1e6


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="8,16,32,64",
                    help="comma-separated square problem sizes")
    ap.add_argument("--repeat", type=int, default=5,
                    help="timing repetitions (best is reported)")
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args()
    sizes = [int(s) for s in args.sizes.split(",")]

    backends = available_backends()
    names = list(backends)
    print(f"backends: {', '.join(names)}")
    if "compiled" not in backends:
        print("compiled extension not built; timing the fallback only")

    header = f"{'kernel':<26}" + "".join(f"{n + ' us':>14}" for n in names)
    if len(names) == 2:
        header += f"{'speedup':>10}"
    print(header)
    print("-" * len(header))
    for label, call in cases(args.seed, sizes):
        row = f"{label:<26}"
        times = [per_call_us(lambda m=backends[n]: call(m), args.repeat)
                 for n in names]
        row += "".join(f"{t:>14.2f}" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
