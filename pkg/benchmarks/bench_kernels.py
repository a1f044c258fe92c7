"""Time the numba kernels against their numpy twins.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Shapes mirror the sweeps: d=100 with T*m fixed near 20000 rows, for equal
task sizes (the common case) and for ragged sizes.  The first numba call of
every kernel is done before timing, so compile time is excluded.
"""

import argparse
import timeit

import numpy as np

from hpsmeta import _kernels

SHAPES = [
    ("T=800  m=25 equal", 800, 25, False),
    ("T=6400 m=5  equal", 6400, 5, False),
    ("T=160  m=100 equal", 160, 100, False),
    ("T=800  m~25 ragged", 800, 25, True),
]


def make(T, m, ragged, d=100, s=5, seed=0):
    g = np.random.default_rng(seed)
    sizes = g.integers(max(1, m // 2), 2 * m, size=T) if ragged else np.full(T, m)
    offsets = np.concatenate([[0], np.cumsum(sizes)]).astype(np.int64)
    X = g.standard_normal((offsets[-1], d))
    y = g.standard_normal(offsets[-1])
    theta = g.standard_normal((T, d))
    basis = np.ascontiguousarray(np.linalg.qr(g.standard_normal((d, s)))[0].T)
    return X, y, offsets, theta, basis


def calls(impl, X, y, offsets, theta, basis):
    return {
        "predict": lambda: impl["predict"](X, offsets, theta),
        "correlate": lambda: impl["correlate"](X, y, offsets),
        "gradient_step": lambda: impl["gradient_step"](X, y, offsets, theta, 0.25),
        "projected_gram": lambda: impl["projected_gram"](X, y, offsets, basis),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    backends = [b for b in ("numpy", "numba") if b in _kernels.IMPLEMENTATIONS]
    print(f"{'shape':<20} {'kernel':<15}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    for label, T, m, ragged in SHAPES:
        data = make(T, m, ragged)
        per_backend = {b: calls(_kernels.IMPLEMENTATIONS[b], *data) for b in backends}
        for name in per_backend["numpy"]:
            times = {}
            for b in backends:
                fn = per_backend[b][name]
                fn()
                times[b] = min(timeit.repeat(fn, number=1, repeat=args.repeat)) * 1e3
            speed = times["numpy"] / times["numba"] if "numba" in times else float("nan")
            print(f"{label:<20} {name:<15}" + "".join(f"{times[b]:>12.3f}" for b in backends) + f"{speed:>9.2f}x")


if __name__ == "__main__":
    main()
