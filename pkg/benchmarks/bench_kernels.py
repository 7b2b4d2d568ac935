"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--points N] [--repeat R]
"""
import argparse
import timeit

import numpy as np

from qrcurves import kernels


def cases(points: int, rng: np.random.Generator) -> dict:
    b3 = rng.normal(size=(points, 2, 3, 3))
    a = rng.normal(size=(points, 3, 3))
    return {
        "dets 3x3": ("dets", (rng.normal(size=(points, 3, 3)),)),
        "dets 4x4": ("dets", (rng.normal(size=(points, 4, 4)),)),
        "sym_eigvals 3x3": ("sym_eigvals", (a @ a.transpose(0, 2, 1),)),
        "block_stats k=2 n=3": ("block_stats", (b3, np.ones((points, 2)), np.ones((points, 3)))),
        "block_stats k=6 n=2": ("block_stats", (rng.normal(size=(points, 6, 2, 2)), np.ones((points, 6)),
                                                np.ones((points, 2)))),
    }


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--points", type=int, default=100_000)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    backends = kernels.available_backends()
    names = sorted(backends)
    print(f"{args.points} matrices per call, best of {args.repeat}")
    print(f"{'kernel':<22}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, (fn, inputs) in cases(args.points, np.random.default_rng(0)).items():
        times = {}
        for name in names:
            f = getattr(backends[name], fn)
            times[name] = min(timeit.repeat(lambda: f(*inputs), number=1, repeat=args.repeat))
        row = f"{label:<22}" + "".join(f"{times[n] * 1e3:>10.2f}ms" for n in names)
        if "cython" in times:
            row += f"{times['numpy'] / times['cython']:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
