"""Benchmark the compiled conv2d kernels against the pure-numpy fallback.

Runs forward, grad-input, and grad-kernel at the two shapes the encoders
actually use (pose and sensor windows) plus a larger stress shape.

Usage: python3 benchmarks/bench_conv.py [--repeats 5] [--batch 64]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from modalign.kernels import BACKEND, numpy_backend

try:
    from modalign.kernels import _conv_cy
except ImportError:
    _conv_cy = None

CASES = [
    ("pose conv1", (3, 17, 100), (8, 3, 11, 11), (5, 5)),
    ("pose conv3", (16, 5, 25), (32, 16, 11, 11), (5, 5)),
    ("sensor conv1", (3, 2, 100), (3, 3, 2, 11), (0, 5)),
    ("sensor conv3", (32, 1, 25), (88, 32, 1, 11), (0, 5)),
    ("stress", (16, 32, 128), (32, 16, 7, 7), (3, 3)),
]


def _time(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench(batch, repeats):
    rng = np.random.default_rng(0)
    impls = [("numpy", numpy_backend)]
    if _conv_cy is not None:
        impls.append(("cython", _conv_cy))
    print(f"active backend: {BACKEND}; batch={batch}, best of {repeats}\n")
    header = f"{'case':<14}{'op':<12}" + "".join(f"{n:>12}" for n, _ in impls)
    if len(impls) == 2:
        header += f"{'speedup':>10}"
    print(header)
    for name, in_shape, k_shape, (ph, pw) in CASES:
        x = rng.standard_normal((batch,) + in_shape).astype(np.float32)
        k = rng.standard_normal(k_shape).astype(np.float32)
        h = in_shape[1] + 2 * ph - k_shape[2] + 1
        w = in_shape[2] + 2 * pw - k_shape[3] + 1
        gy = rng.standard_normal((batch, k_shape[0], h, w)).astype(np.float32)
        ops = {
            "forward": lambda impl: impl.conv2d_forward(x, k, ph, pw),
            "grad_input": lambda impl: impl.conv2d_grad_input(
                gy, k, ph, pw, in_shape[1], in_shape[2]),
            "grad_kernel": lambda impl: impl.conv2d_grad_kernel(
                gy, x, k_shape[2], k_shape[3], ph, pw),
        }
        ref = {op: impls[0][1] and ops[op](impls[0][1]) for op in ops}
        for op, run in ops.items():
            times = [_time(lambda i=impl: run(i), repeats) for _, impl in impls]
            if len(impls) == 2:
                # accumulation order differs between backends; compare in norm
                a, b = ref[op], run(impls[1][1])
                rel = np.linalg.norm(a - b) / max(np.linalg.norm(a), 1e-12)
                if rel > 1e-5:
                    raise AssertionError(f"{name}/{op}: backends disagree, rel {rel:g}")
            row = f"{name:<14}{op:<12}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
            if len(impls) == 2:
                row += f"{times[0] / times[1]:>9.2f}x"
            print(row)


if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=5)
    ap.add_argument("--batch", type=int, default=64)
    args = ap.parse_args()
    bench(args.batch, args.repeats)
