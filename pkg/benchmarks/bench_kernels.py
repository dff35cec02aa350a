"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--shots 200000]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from adaptmit import _pykernels

try:
    from adaptmit import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def _cases(shots: int, units: int, samples: int, steps: int, rng: np.random.Generator):
    uniforms = rng.random((shots, 5))
    weights = rng.normal(size=(units, 13))
    data = rng.normal(size=(samples, 13))
    side = int(np.sqrt(units))
    coords = np.array([(i // side, i % side) for i in range(units)], dtype=np.float64)
    grid_d2 = ((coords[:, None, :] - coords[None, :, :]) ** 2).sum(-1)
    order = rng.integers(0, samples, size=steps)
    lr = np.linspace(0.5, 0.01, steps)
    radius = np.linspace(2.0, 0.5, steps)
    return {
        "tally_shots": lambda m: m.tally_shots(uniforms, 0.05, 1),
        "bmu_batch": lambda m: m.bmu_batch(weights, data),
        "som_train_steps": lambda m: m.som_train_steps(weights.copy(), grid_d2, data, order, lr, radius),
    }


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--shots", type=int, default=200_000)
    ap.add_argument("--units", type=int, default=64, help="SOM units (a square number)")
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--steps", type=int, default=5000)
    args = ap.parse_args(argv)

    cases = _cases(args.shots, args.units, args.samples, args.steps, np.random.default_rng(0))
    print(f"{'kernel':<16} {'python ms':>10} {'cython ms':>10} {'speedup':>8}")
    for name, fn in cases.items():
        t_py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat)) * 1e3
        if _ckernels is None:
            print(f"{name:<16} {t_py:10.2f} {'n/a':>10} {'n/a':>8}")
            continue
        t_c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) * 1e3
        print(f"{name:<16} {t_py:10.2f} {t_c:10.2f} {t_py / t_c:7.1f}x")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
