"""Time the numba kernels against their numpy fallbacks.

    python3 benchmarks/bench_kernels.py [--repeat N]

Prints one line per kernel with the best-of-N wall time of each backend
and the speed-up. Inputs match a 64x64 scene at stride 2 with the default
sampler, which is the shape the training loop sees.
"""
import argparse
import timeit

import numpy as np

from dvis.kernels import _numpy as numpy_impl
from dvis.kernels import numba_impl
from dvis.sampling import SamplerConfig, stratified_offsets


def cases(rng):
    xp = rng.normal(size=(16, 34, 34))
    cols = rng.normal(size=(16 * 9, 32 * 32))
    f = rng.uniform(0, 5, size=32 * 32)
    fg = rng.random((32, 32)) < 0.6
    offsets = stratified_offsets(SamplerConfig())
    a, b = numpy_impl.stratified_pairs(fg, offsets)
    same = rng.random(a.shape[0]) < 0.5
    sv = np.sort(rng.uniform(1, 8, size=600))
    csum = np.concatenate([[0.0], np.cumsum(sv)])
    uniq = np.unique(sv)
    return {
        "im2col": (xp, 3, 1, 32, 32),
        "col2im": (cols, 16, 34, 34, 3, 1, 32, 32),
        "pair_loss": (f, a, b, same, 0.1, 1.0),
        "stratified_pairs": (fg, offsets),
        "mean_shift_modes": (sv, csum, uniq, 0.4, 1e-3, 100),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=20)
    args = ap.parse_args(argv)
    if numba_impl is None:
        raise SystemExit("numba backend unavailable (DVIS_DISABLE_NUMBA set or numba missing)")
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18}{'numpy ms':>10}{'numba ms':>10}{'speed-up':>10}")
    for name, args_ in cases(rng).items():
        nb = getattr(numba_impl, name)
        npf = getattr(numpy_impl, name)
        nb(*args_)  # compile
        t_np = min(timeit.repeat(lambda: npf(*args_), number=args.number, repeat=args.repeat)) / args.number
        t_nb = min(timeit.repeat(lambda: nb(*args_), number=args.number, repeat=args.repeat)) / args.number
        print(f"{name:<18}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>9.1f}x")


if __name__ == "__main__":
    main()
