"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_backends.py [--height 256 --width 512 --dmax 192 --half-res]

Each backend builds the same matching volume; the script checks that the two
outputs agree before printing timings.
"""
import argparse
import time

import numpy as np

from msvol.matchers import COST_FUNCTIONS, MatcherConfig
from msvol.volume import build_matching_volume, downsample2


def best_of(fn, repeat):
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--height", type=int, default=256)
    ap.add_argument("--width", type=int, default=512)
    ap.add_argument("--dmax", type=int, default=192)
    ap.add_argument("--half-res", action="store_true")
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    left = rng.uniform(0, 255, (args.height, args.width))
    right = np.roll(left, -7, axis=1)
    cfg = MatcherConfig()

    # compile (or load cached) kernels outside the timed region
    build_matching_volume(left[:16, :32], right[:16, :32], 4, backend="numba")

    print(f"{args.height}x{args.width} D={args.dmax} half_res={args.half_res}")
    print(f"{'stage':<10}{'numba ms':>12}{'numpy ms':>12}{'speedup':>10}{'max |diff|':>14}")
    # per-matcher rows see the same images the volume builder does
    L, R, D = left, right, args.dmax
    if args.half_res:
        L, R, D = downsample2(left), downsample2(right), -(-args.dmax // 2)
    for name, fn in COST_FUNCTIONS.items():
        t = {}
        outs = {}
        for be in ("numba", "numpy"):
            t[be], outs[be] = best_of(lambda: fn(L, R, D, cfg, backend=be), args.repeat)
        diff = float(np.abs(outs["numba"].cost - outs["numpy"].cost).max())
        print(f"{name:<10}{t['numba'] * 1e3:>12.1f}{t['numpy'] * 1e3:>12.1f}"
              f"{t['numpy'] / t['numba']:>10.1f}{diff:>14.2e}")

    t = {}
    outs = {}
    for be in ("numba", "numpy"):
        t[be], outs[be] = best_of(lambda: build_matching_volume(
            left, right, args.dmax, half_res=args.half_res, backend=be), args.repeat)
    diff = float(np.abs(outs["numba"].data - outs["numpy"].data).max())
    same_valid = np.array_equal(outs["numba"].valid, outs["numpy"].valid)
    print(f"{'volume':<10}{t['numba'] * 1e3:>12.1f}{t['numpy'] * 1e3:>12.1f}"
          f"{t['numpy'] / t['numba']:>10.1f}{diff:>14.2e}")
    if not same_valid or diff > 1e-4:
        raise SystemExit("backends disagree")


if __name__ == "__main__":
    main()
