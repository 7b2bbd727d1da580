"""Time the compiled kernels against the NumPy fallback.

    python benchmarks/bench_kernels.py [--size 128] [--repeat 5]
"""

import argparse
import statistics
import time

import numpy as np

from bidiflow import _backend
from bidiflow.energy import LossConfig, total_loss
from bidiflow.grid import FlowField


def bench(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def cases(n, rng):
    src = rng.random((1, n, n)) * 255
    lum = src[0]
    u, v = rng.uniform(-4, 4, (2, n, n))
    grad = rng.normal(size=(1, n, n))
    mask = np.ones((n, n))
    i1, i2 = rng.random((n, n)), rng.random((n, n))
    wf = FlowField(*rng.uniform(-3, 3, (2, n, n)))
    wb = FlowField(*rng.uniform(-3, 3, (2, n, n)))
    cfg = LossConfig()

    def make(k):
        feats = k.census_features(lum, 3, 0.81)
        return {
            "warp": lambda: k.warp(src, u, v),
            "splat": lambda: k.splat(grad, u, v),
            "census_features r=3": lambda: k.census_features(lum, 3, 0.81),
            "census_cost r=3": lambda: k.census_cost(lum, np.asarray(feats), mask, 3, 0.81, 0.1, 0.45, 0.001),
            "total_loss + grad": lambda: total_loss(i1, i2, wf, wb, cfg),
        }
    return make


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--size", type=int, default=128)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    make = cases(args.size, np.random.default_rng(0))
    names = sorted(_backend.BACKENDS)
    results = {}
    for name in names:
        kern = _backend.BACKENDS[name]
        _backend.kernels = kern
        for case, fn in make(kern).items():
            results[(case, name)] = bench(fn, args.repeat)

    print(f"{args.size}x{args.size}, median of {args.repeat} runs (ms)")
    head = f"{'kernel':<22}" + "".join(f"{n:>12}" for n in names)
    if "compiled" in names:
        head += f"{'speedup':>10}"
    print(head)
    for case in make(_backend.BACKENDS[names[0]]):
        row = f"{case:<22}" + "".join(f"{1e3 * results[(case, n)]:>12.2f}" for n in names)
        if "compiled" in names:
            row += f"{results[(case, 'python')] / results[(case, 'compiled')]:>9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
