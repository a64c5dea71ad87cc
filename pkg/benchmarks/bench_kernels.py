"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--batch 64] [--frames 198] [--repeat 5]
"""
import argparse
import timeit

import numpy as np

from bcpredict.numerics import _pykernels as py

try:
    from bcpredict.numerics import _ckernels as ck
except ImportError:
    ck = None


def cases(x, w, b, pool):
    fmap = py.conv_forward(x, w, b)
    out, arg = py.relu_maxpool_forward(fmap, pool)
    gfmap = np.ones_like(fmap)
    gout = np.ones_like(out)
    return {
        "conv_forward": lambda m: m.conv_forward(x, w, b),
        "conv_backward": lambda m: m.conv_backward(x, w, gfmap),
        "relu_maxpool_forward": lambda m: m.relu_maxpool_forward(fmap, pool),
        "relu_maxpool_backward": lambda m: m.relu_maxpool_backward(gout, out, arg, fmap.shape[1]),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=64)
    ap.add_argument("--frames", type=int, default=198)
    ap.add_argument("--filters", type=int, default=32)
    ap.add_argument("--width", type=int, default=10)
    ap.add_argument("--pool", type=int, default=10)
    ap.add_argument("--repeat", type=int, default=5)
    a = ap.parse_args()

    rng = np.random.default_rng(0)
    x = rng.normal(size=(a.batch, a.frames, 13))
    w = rng.normal(size=(a.filters, a.width, 13))
    b = rng.normal(size=a.filters)
    print(f"input {x.shape}, {a.filters} filters of width {a.width}, pool {a.pool}")
    if ck is None:
        print("compiled kernels not built; timing numpy only")
    print(f"{'kernel':24s} {'numpy ms':>10s} {'cython ms':>10s} {'speedup':>8s}")
    for name, fn in cases(x, w, b, a.pool).items():
        t_py = min(timeit.repeat(lambda: fn(py), number=1, repeat=a.repeat)) * 1e3
        if ck is None:
            print(f"{name:24s} {t_py:10.2f}")
            continue
        t_ck = min(timeit.repeat(lambda: fn(ck), number=1, repeat=a.repeat)) * 1e3
        print(f"{name:24s} {t_py:10.2f} {t_ck:10.2f} {t_py / t_ck:7.1f}x")


if __name__ == "__main__":
    main()
