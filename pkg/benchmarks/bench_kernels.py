"""Time the numba kernels against their numpy fallbacks at training-size shapes.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both implementations are imported directly, so the CTEN_DISABLE_NUMBA flag
does not matter here. The first numba call (compilation) is excluded.
"""

import argparse
import timeit

import numpy as np

from cten.kernels import NUMBA_IMPL, NUMPY_IMPL


def cases(rng):
    b, t, h = 64, 100, 160
    hh = rng.normal(size=(b, t, h))
    omega, phi, grid = rng.uniform(6, 600, h), rng.uniform(0, 6, h), np.arange(t) * 1e-3
    _, _, c, s = NUMPY_IMPL["wave_forward"](hh, omega, phi, grid)
    g = rng.normal(size=hh.shape)
    x = rng.normal(size=(b * 2 * h, t))
    vals, idx = NUMPY_IMPL["rowmax"](x)
    return {
        "wave_forward": (hh, omega, phi, grid),
        "wave_backward": (hh, c, s, grid, g, g),
        "rowmax": (x,),
        "rowmax_scatter": (vals, idx, t),
        "exp_accumulate": (rng.normal(size=(100, 4)), 0.95),
        "gaussian_sum": (rng.uniform(0, 1, 50), np.linspace(0, 1, 4001), 0.01),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    print(f"{'kernel':16s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, a in cases(rng).items():
        NUMBA_IMPL[name](*a)  # compile
        t_np = min(timeit.repeat(lambda: NUMPY_IMPL[name](*a), number=1, repeat=args.repeat))
        t_nb = min(timeit.repeat(lambda: NUMBA_IMPL[name](*a), number=1, repeat=args.repeat))
        print(f"{name:16s} {1e3 * t_np:10.3f} {1e3 * t_nb:10.3f} {t_np / t_nb:8.2f}x")


if __name__ == "__main__":
    main()
