"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Each kernel runs once untimed (JIT compile / cache load), then ``repeat``
times; the best wall time is reported with the speedup and the largest
difference between the two outputs.
"""

import argparse
import time

import numpy as np

from dranloc import _kernels


def cases(rng):
    fine = rng.random((192, 256, 32)).astype(np.float32)
    n = 20000
    gx = rng.uniform(-2, 257, n)
    gy = rng.uniform(-2, 193, n)
    corr = rng.standard_normal((48 * 64, 300))
    R = np.linalg.qr(rng.standard_normal((3, 3)))[0]
    R *= np.sign(np.linalg.det(R))
    pts = rng.uniform(-1, 1, (50000, 3)) + [0, 0, 4]
    pix = rng.uniform(0, 256, (50000, 2))
    intr = np.array([180.0, 180.0, 127.5, 95.5])
    return {
        "bilinear_values (20k x 32)": ("bilinear_values", (fine, gx, gy)),
        "bilinear_values_grads (20k x 32)": ("bilinear_values_grads", (fine, gx, gy)),
        "ratio_peaks (3072 texels x 300)": ("ratio_peaks", (corr, 64, 4.0)),
        "reprojection_errors (50k)": ("reprojection_errors", (R, np.zeros(3), intr, pts, pix, 1e-6)),
    }


def best_time(fn, args, repeat):
    fn(*args)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    fin = np.isfinite(a)
    if not np.array_equal(fin, np.isfinite(b)):
        return np.inf
    return float(np.max(np.abs(a[fin] - b[fin]), initial=0.0))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=10)
    args = ap.parse_args(argv)
    if "numba" not in _kernels.IMPLEMENTATIONS:
        print("numba is unavailable; nothing to compare")
        return 1
    nb, npy = _kernels.IMPLEMENTATIONS["numba"], _kernels.IMPLEMENTATIONS["numpy"]
    print(f"{'kernel':36s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max diff':>10s}")
    for label, (name, fargs) in cases(np.random.default_rng(0)).items():
        t_np = best_time(getattr(npy, name), fargs, args.repeat)
        t_nb = best_time(getattr(nb, name), fargs, args.repeat)
        diff = max_diff(getattr(npy, name)(*fargs), getattr(nb, name)(*fargs))
        print(f"{label:36s} {1e3 * t_np:10.2f} {1e3 * t_nb:10.2f} {t_np / t_nb:8.1f} {diff:10.2e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
