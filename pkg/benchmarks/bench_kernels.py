"""Benchmark the hot kernels: numba @njit vs the pure-numpy fallback.

Shapes mirror one training batch of the 28x28-12c5-mp2-64c5-mp2 stack.

    python benchmarks/bench_kernels.py [--batch 32] [--repeats 5]

The active production backend is whatever SPIKEBP_BACKEND resolves to;
this script always times both paths directly.
"""

import argparse
import time

import numpy as np

from spikebp import backend, kernels


def bench(fn, args, repeats):
    fn(*args)  # warm-up (JIT compile / cache touch)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--batch", type=int, default=32)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    if not backend.numba_available():
        raise SystemExit("numba is not importable; nothing to compare")

    rng = np.random.default_rng(0)
    n = args.batch
    x1 = (rng.random((n, 1, 28, 28)) < 0.3).astype(np.float32)
    k1 = rng.standard_normal((12, 1, 5, 5)).astype(np.float32)
    b1 = np.zeros(12, np.float32)
    g1 = rng.standard_normal((n, 12, 24, 24)).astype(np.float32)
    x2 = (rng.random((n, 12, 12, 12)) < 0.3).astype(np.float32)
    k2 = rng.standard_normal((64, 12, 5, 5)).astype(np.float32)
    b2 = np.zeros(64, np.float32)
    g2 = rng.standard_normal((n, 64, 8, 8)).astype(np.float32)
    xp = rng.standard_normal((n, 12, 24, 24)).astype(np.float32)
    _, idx = kernels.maxpool2x2_forward_np(xp)
    gp = rng.standard_normal((n, 12, 12, 12)).astype(np.float32)

    cases = [
        ("conv5x5_forward (1->12, 28x28)", "conv5x5_forward", (x1, k1, b1)),
        ("conv5x5_forward (12->64, 12x12)", "conv5x5_forward", (x2, k2, b2)),
        ("conv5x5_backward_kernel (12->64)", "conv5x5_backward_kernel", (g2, x2)),
        ("conv5x5_backward_input (1->12)", "conv5x5_backward_input", (g1, k1)),
        ("maxpool2x2_forward (12, 24x24)", "maxpool2x2_forward", (xp,)),
        ("maxpool2x2_backward (12, 24x24)", "maxpool2x2_backward", (gp, idx)),
    ]

    print(f"batch={n}, repeats={args.repeats}, active backend={backend.ACTIVE}")
    print(f"{'kernel':36s} {'numpy':>10s} {'numba':>10s} {'speedup':>8s}")
    for label, name, arrs in cases:
        variants = kernels.variants(name)
        t_np = bench(variants["numpy"], arrs, args.repeats)
        t_nb = bench(variants["numba"], arrs, args.repeats)
        print(f"{label:36s} {t_np * 1e3:9.2f}ms {t_nb * 1e3:9.2f}ms "
              f"{t_np / t_nb:7.2f}x")


if __name__ == "__main__":
    main()
