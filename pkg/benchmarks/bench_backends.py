#!/usr/bin/env python3
"""Benchmark the numba kernel lane against the pure-numpy fallback.

Times the three hot kernels at training-realistic sizes and prints a
comparison table.  Run from the repository root:

    python benchmarks/bench_backends.py [--repeats N]

The numba lane includes a warmup call so JIT compilation is not timed.
"""

import argparse
import time

import numpy as np

from specklelab import _kernels_numpy

try:
    from specklelab import _kernels_numba
except ImportError:
    _kernels_numba = None


def time_call(func, *args, repeats=5):
    func(*args)  # warmup (JIT compile / cache touch)
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        func(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def cases():
    rng = np.random.default_rng(0)
    # training-shaped conv: batch of 33x33 patches, 32 feature maps, 3x3
    x = rng.standard_normal((16, 32, 33, 33))
    w = rng.standard_normal((32, 32, 3, 3)) * 0.1
    go = rng.standard_normal((16, 32, 33, 33))
    macs = 16 * 32 * 32 * 9 * 33 * 33
    yield ("conv2d_fwd 16x32x33x33", "conv2d_fwd", (x, w, 1), macs)
    yield ("conv2d_grad_kernel same", "conv2d_grad_kernel", (x, go, 3, 1), macs)
    # inference-shaped conv: one 256x256 tile, 64 maps
    xi = rng.standard_normal((1, 64, 256, 256))
    wi = rng.standard_normal((64, 64, 3, 3)) * 0.1
    macs_i = 64 * 64 * 9 * 256 * 256
    yield ("conv2d_fwd 1x64x256x256", "conv2d_fwd", (xi, wi, 1), macs_i)
    # bulk speckle sampling
    yield ("gamma_field 1e6 L=1", "gamma_field", (12345, 10 ** 6, 1.0), None)
    yield ("gamma_field 1e6 L=4", "gamma_field", (12345, 10 ** 6, 4.0), None)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    lanes = [("numpy", _kernels_numpy)]
    if _kernels_numba is not None:
        lanes.insert(0, ("numba", _kernels_numba))
    else:
        print("numba not importable; benchmarking the numpy lane only")

    header = f"{'kernel':28s}" + "".join(f"{name:>12s}" for name, _ in lanes)
    if len(lanes) == 2:
        header += f"{'speedup':>10s}"
    print(header)
    print("-" * len(header))
    for label, attr, call_args, macs in cases():
        times = [time_call(getattr(mod, attr), *call_args, repeats=args.repeats)
                 for _, mod in lanes]
        row = f"{label:28s}" + "".join(f"{t * 1e3:10.1f}ms" for t in times)
        if len(times) == 2:
            row += f"{times[1] / times[0]:9.2f}x"
        if macs is not None:
            row += f"   ({macs / times[0] / 1e9:.1f} GMAC/s best)"
        print(row)


if __name__ == "__main__":
    main()
