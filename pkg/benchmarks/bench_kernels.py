"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--points N] [--modes M] [--repeat R]

Both backends are called explicitly, so the NECKFORGE_DISABLE_NUMBA flag does
not matter here.  The first numba call (compilation or cache load) is timed
separately.
"""

import argparse
import math
import time

import numpy as np

from neckforge import _kernels
from neckforge.greens import FlatTorusCY, _ewald_setup


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def max_diff(a, b):
    return max(float(np.max(np.abs(x - y))) for x, y in zip(a, b))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=4096)
    ap.add_argument("--modes", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if not _kernels.HAVE_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    torus = FlatTorusCY()
    L = math.sqrt(2 * math.pi)
    x = rng.uniform(0, L, (args.points, 2))
    z = rng.uniform(-2, 2, args.points)
    _, xi = torus.characters(args.modes)
    theta = rng.uniform(0, 2 * math.pi, len(xi))
    amp = rng.normal(size=len(xi))
    kappa = np.linalg.norm(xi, axis=1)

    print(f"{'kernel':<10} {'numpy [s]':>10} {'numba [s]':>10} {'first [s]':>10} {'speedup':>8} {'max diff':>10}")
    for zorder in (0, 1):
        t0 = time.perf_counter()
        _kernels.mode_sum(x[:2], z[:2], xi, theta, amp, kappa, zorder, use_numba=True)
        first = time.perf_counter() - t0
        tn, a = best_of(lambda: _kernels.mode_sum(x, z, xi, theta, amp, kappa, zorder, use_numba=False), args.repeat)
        tj, b = best_of(lambda: _kernels.mode_sum(x, z, xi, theta, amp, kappa, zorder, use_numba=True), args.repeat)
        print(f"{'mode_sum' + str(zorder):<10} {tn:10.4f} {tj:10.4f} {first:10.4f} {tn / tj:8.2f} {max_diff(a, b):10.2e}")

    images, recip, area, alpha = _ewald_setup(torus)
    src = np.array([[0.3 * L, 0.4 * L], [0.7 * L, 0.8 * L]])
    mult = np.ones(2)
    zz = rng.uniform(-0.5, 0.5, args.points)
    t0 = time.perf_counter()
    _kernels.ewald_sum(x[:2], zz[:2], src, mult, images, recip, area, alpha, use_numba=True)
    first = time.perf_counter() - t0
    tn, a = best_of(lambda: _kernels.ewald_sum(x, zz, src, mult, images, recip, area, alpha, use_numba=False), args.repeat)
    tj, b = best_of(lambda: _kernels.ewald_sum(x, zz, src, mult, images, recip, area, alpha, use_numba=True), args.repeat)
    print(f"{'ewald':<10} {tn:10.4f} {tj:10.4f} {first:10.4f} {tn / tj:8.2f} {max_diff(a, b):10.2e}")


if __name__ == "__main__":
    main()
