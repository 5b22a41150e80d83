"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both variants are imported directly, so the VANI_DISABLE_NUMBA flag does
not matter here. Each kernel is checked for agreement before it is timed.
"""
import argparse
import time

import numpy as np

from vani import kernels
from vani._jit import HAVE_NUMBA


def best_of(fn, args, repeat):
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases(rng):
    a = rng.integers(0, 30, 200).astype(np.int32)
    b = rng.integers(0, 30, 180).astype(np.int32)
    yield "levenshtein 200x180", "levenshtein", (a, b)

    lengths = rng.integers(20, 80, 400)
    codes = rng.integers(0, 30, lengths.sum()).astype(np.int32)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    ia = rng.integers(0, 200, 2000).astype(np.int64)
    ib = rng.integers(200, 400, 2000).astype(np.int64)
    yield "pairwise_levenshtein 2000 pairs", "pairwise_levenshtein", (codes, offsets, ia, ib)

    x = rng.standard_normal(22050 * 2)
    starts = np.arange(0, len(x) - 2048, 256).astype(np.int64)
    yield "yin_cmnd 2 s @ 22.05 kHz", "yin_cmnd", (x, starts, 1024, 341)

    H, F = 256, 400
    zx = rng.standard_normal((F, 4 * H)) * 0.5
    U = rng.standard_normal((4 * H, H)) * 0.05
    yield "lstm_forward H=256 F=400", "lstm_forward", (zx, U)
    hs, cs, gates = kernels.lstm_forward_np(zx, U)
    dhs = rng.standard_normal((F, H))
    yield "lstm_backward H=256 F=400", "lstm_backward", (dhs, hs, cs, gates, U)


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(x, y) for x, y in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64))))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if not HAVE_NUMBA:
        raise SystemExit("numba is not installed; nothing to compare")
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':34s} {'numba ms':>10s} {'numpy ms':>10s} {'speedup':>8s} {'max diff':>9s}")
    for label, name, fargs in cases(rng):
        nb = getattr(kernels, f"{name}_nb")
        npv = getattr(kernels, f"{name}_np")
        diff = max_diff(nb(*fargs), npv(*fargs))  # also triggers compilation
        t_nb = best_of(nb, fargs, args.repeat)
        t_np = best_of(npv, fargs, args.repeat)
        print(f"{label:34s} {t_nb * 1e3:10.3f} {t_np * 1e3:10.3f} {t_np / t_nb:7.1f}x {diff:9.1e}")


if __name__ == "__main__":
    main()
