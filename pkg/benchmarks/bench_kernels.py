"""Compare the compiled and plain-numpy math kernels.

Runs the forward pass, loss, gradient, and accuracy kernels on a spread of
batch shapes and prints per-call timings for both implementations. The
compiled path is warmed up first so compilation time is reported separately
from steady-state cost.

Usage:
    python3 benchmarks/bench_kernels.py [--repeats 200]
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from dflsim import kernels

CASES = [
    # (batch, d_in, d_hidden, classes)
    (32, 20, 16, 8),
    (128, 20, 16, 8),
    (512, 32, 32, 10),
    (2048, 64, 64, 10),
]


def _problem(rng, n, d, h, c):
    X = rng.normal(size=(n, d))
    y = rng.integers(0, c, size=n)
    W1 = rng.normal(size=(h, d)) / np.sqrt(d)
    b1 = np.zeros(h)
    W2 = rng.normal(size=(c, h)) / np.sqrt(h)
    b2 = np.zeros(c)
    return X, y, W1, b1, W2, b2


def _time(fn, args, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeats", type=int, default=200,
                    help="timing repetitions per case (best is kept)")
    args = ap.parse_args()

    print(f"numba available: {kernels.HAVE_NUMBA}; "
          f"compiled path enabled: {kernels.JIT_ENABLED}")
    if not (kernels.HAVE_NUMBA and kernels.JIT_ENABLED):
        print("compiled path unavailable; timing the numpy path only")

    rng = np.random.default_rng(0)
    pairs = [("loss", kernels.loss_np, kernels._loss_nb if kernels.HAVE_NUMBA else None),
             ("grads", kernels.loss_grads_np,
              kernels._loss_grads_nb if kernels.HAVE_NUMBA else None),
             ("accuracy", kernels.accuracy_np,
              kernels._accuracy_nb if kernels.HAVE_NUMBA else None)]

    header = f"{'case':>22}  {'kernel':>9}  {'numpy':>12}  {'compiled':>12}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n, d, h, c in CASES:
        X, y, W1, b1, W2, b2 = _problem(rng, n, d, h, c)
        call = (X, y.astype(np.int64), W1, b1, W2, b2)
        label = f"n={n} d={d} h={h} c={c}"
        for name, np_fn, nb_fn in pairs:
            t_np = _time(np_fn, call, args.repeats)
            if nb_fn is not None and kernels.JIT_ENABLED:
                nb_fn(*call)  # warm-up triggers compilation
                t_nb = _time(nb_fn, call, args.repeats)
                ratio = t_np / t_nb if t_nb > 0 else float("inf")
                print(f"{label:>22}  {name:>9}  {t_np * 1e6:>10.1f}us  "
                      f"{t_nb * 1e6:>10.1f}us  {ratio:>7.2f}x")
            else:
                print(f"{label:>22}  {name:>9}  {t_np * 1e6:>10.1f}us  "
                      f"{'-':>12}  {'-':>8}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
