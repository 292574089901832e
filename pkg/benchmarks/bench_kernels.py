"""Benchmark the compiled voxel kernels against the pure-Python fallback.

Usage: python benchmarks/bench_kernels.py [--size 64] [--repeat 3]
"""

import argparse
import time

import numpy as np

from sonoplan.kernels import _fallback

try:
    from sonoplan.kernels import _native
except ImportError:
    _native = None


def _phantom_arrays(size: int):
    rng = np.random.default_rng(0)
    values = rng.normal(0.0, 0.05, size=(size, size, size)).astype(np.float32)
    center = size // 2
    x, y, z = np.indices((size, size, size))
    lesion = (x - center) ** 2 + (y - center) ** 2 + (z - center) ** 2 < (size // 4) ** 2
    values[lesion] += 1.0
    quant = np.where(lesion, (values * 8).astype(np.int32) % 8, -1).astype(np.int32)
    mask = lesion.astype(np.uint8)
    levels = np.clip(quant, 0, 7)
    return values, quant, mask, levels


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    values, quant, mask, levels = _phantom_arrays(args.size)
    seeds = np.array([[args.size // 2] * 3], dtype=np.int64)
    box = (0, 0, 0, args.size - 1, args.size - 1, args.size - 1)
    offsets = np.array(
        [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, 0, 1), (0, 1, 1), (1, 1, 1)],
        dtype=np.int32,
    )

    cases = [
        ("label_components (26-conn zones)", lambda impl: impl.label_components(levels, mask, 26)),
        ("region_grow (center seed)", lambda impl: impl.region_grow(values, seeds, 1.0, 0.5, box)),
        ("glcm_counts (7 offsets)", lambda impl: impl.glcm_counts(quant, 8, offsets)),
    ]

    print(f"volume: {args.size}^3 = {args.size ** 3} voxels, best of {args.repeat}\n")
    header = f"{'kernel':<36} {'python':>10} {'native':>10} {'speedup':>9}"
    print(header)
    print("-" * len(header))
    for name, runner in cases:
        t_py = _time(lambda: runner(_fallback), args.repeat)
        if _native is not None:
            t_nat = _time(lambda: runner(_native), args.repeat)
            print(f"{name:<36} {t_py * 1e3:>8.1f}ms {t_nat * 1e3:>8.1f}ms {t_py / t_nat:>8.1f}x")
        else:
            print(f"{name:<36} {t_py * 1e3:>8.1f}ms {'n/a':>10} {'n/a':>9}")
    if _native is None:
        print("\ncompiled kernels not built; install the package to compare")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
