"""Compare the compiled and pure-numpy kernel backends.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Prints best-of-N wall time per kernel and checks both backends agree bit for bit.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from pager import _kernels


def cases(rng):
    luma = rng.random((256, 32, 32))
    # blocky images so the edge detector has real work
    blocks = np.kron(rng.random((256, 4, 4)), np.ones((8, 8)))
    x = rng.standard_normal((4096, 256))
    means = rng.standard_normal((100, 256))
    iv = 1.0 / rng.uniform(0.5, 2.0, (100, 256))
    const = rng.standard_normal(100)
    return {
        "canny 256x32x32 noise": ("canny_edges", (luma, 0.1, 0.25, 1.0)),
        "canny 256x32x32 blocks": ("canny_edges", (blocks, 0.1, 0.25, 1.0)),
        "gauss scores 4096x256, K=100": ("diag_gauss_scores", (x, means, iv, const)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args(argv)
    py = _kernels.python_backend
    cy = _kernels.compiled_backend
    if cy is None:
        print("compiled backend not built; only the numpy fallback is available")
    rng = np.random.default_rng(0)
    print(f"{'kernel':32s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}  identical")
    for name, (fn, args) in cases(rng).items():
        t_py = min(timeit.repeat(lambda: getattr(py, fn)(*args), number=1, repeat=a.repeat)) * 1e3
        if cy is None:
            print(f"{name:32s} {t_py:10.2f} {'-':>10s}")
            continue
        t_cy = min(timeit.repeat(lambda: getattr(cy, fn)(*args), number=1, repeat=a.repeat)) * 1e3
        same = np.array_equal(getattr(py, fn)(*args), getattr(cy, fn)(*args))
        print(f"{name:32s} {t_py:10.2f} {t_cy:10.2f} {t_py / t_cy:7.1f}x  {same}")


if __name__ == "__main__":
    main()
