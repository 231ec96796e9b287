"""Benchmark the numba kernels against the pure-numpy fallback.

Run as: python benchmarks/bench_kernels.py

The numba path is the default; set GALLOP_NO_NUMBA=1 to force the numpy
implementations everywhere in the package. This script times both
implementations directly (independent of the env flag) on ImageNet-ish
shapes and prints a table.
"""

import time

import numpy as np

from gallop import _kernels


def time_fn(fn, *args, repeats=20):
    fn(*args)  # warm-up (and JIT compile for the numba path)
    start = time.perf_counter()
    for _ in range(repeats):
        fn(*args)
    return (time.perf_counter() - start) / repeats


def main():
    rng = np.random.default_rng(0)
    print(f"active package backend: {_kernels.BACKEND}")
    print()
    print(f"{'kernel':<32}{'shape':<24}{'numpy':>12}{'numba':>12}{'speedup':>10}")

    cases = [
        ("topk_block_mask k=10", (128, 196, 100), 10),
        ("topk_block_mask k=40", (128, 196, 100), 40),
        ("topk_block_mask k=4", (512, 32, 16), 4),
    ]
    for name, shape, k in cases:
        sims = rng.standard_normal(shape)
        t_np = time_fn(_kernels._topk_block_mask_np, sims, k)
        if _kernels.BACKEND == "numba":
            t_nb = time_fn(_kernels._topk_block_mask_nb, sims, k)
            ratio = f"{t_np / t_nb:9.2f}x"
        else:
            t_nb, ratio = float("nan"), "      n/a"
        print(f"{name:<32}{str(shape):<24}{t_np * 1e3:10.3f}ms{t_nb * 1e3:10.3f}ms{ratio}")

    for B, C in ((4096, 100), (65536, 16)):
        logits = rng.standard_normal((B, C))
        labels = rng.integers(0, C, size=B)
        t_np = time_fn(_kernels._ce_mean_np, logits, labels)
        if _kernels.BACKEND == "numba":
            t_nb = time_fn(_kernels._ce_mean_nb, logits, labels)
            ratio = f"{t_np / t_nb:9.2f}x"
        else:
            t_nb, ratio = float("nan"), "      n/a"
        name = "ce_mean"
        print(f"{name:<32}{str((B, C)):<24}{t_np * 1e3:10.3f}ms{t_nb * 1e3:10.3f}ms{ratio}")


if __name__ == "__main__":
    main()
