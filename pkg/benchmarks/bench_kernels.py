"""Time the compiled kernels against the NumPy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are imported directly, so the environment switch is not needed.
Each kernel's outputs are checked for equality before timing.
"""
import argparse
import timeit

import numpy as np

from hifind import _pykernels

try:
    from hifind import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    x = rng.normal(size=(2, 8, 34, 18, 18))
    kernel, stride, out = (7, 3, 3), (1, 1, 1), (28, 16, 16)
    cols = rng.normal(size=(8 * 63, 2 * 28 * 16 * 16))
    mask = (rng.random((128, 24, 32)) < 0.3).astype(np.uint8)
    return {
        "im2col3d (2,8,34,18,18) k=7x3x3": lambda m: m.im2col3d(x, kernel, stride, out),
        "col2im3d adjoint of the above": lambda m: m.col2im3d(cols, x.shape, kernel, stride, out),
        "label3d 128x24x32, 30% fill, 26-conn": lambda m: m.label3d(mask, 26),
        "label3d 128x24x32, 30% fill, 6-conn": lambda m: m.label3d(mask, 6),
    }


def _same(a, b):
    if isinstance(a, tuple):
        return all(_same(u, v) for u, v in zip(a, b))
    return np.array_equal(np.asarray(a), np.asarray(b)) if not isinstance(a, np.ndarray) or a.dtype.kind in "iub" \
        else np.allclose(a, b, rtol=0, atol=1e-12)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if _ckernels is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation` first")
    print(f"{'kernel':40s} {'python ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(np.random.default_rng(0)).items():
        if not _same(fn(_pykernels), fn(_ckernels)):
            raise SystemExit(f"backends disagree on {name}")
        py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        cy = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:40s} {py:10.1f} {cy:10.1f} {py / cy:7.1f}x")


if __name__ == "__main__":
    main()
