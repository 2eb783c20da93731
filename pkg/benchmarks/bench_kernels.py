"""Compare the compiled and numpy patch kernels, and a full conv layer using each.

Run: ``python benchmarks/bench_kernels.py [--repeat N]``
"""

import argparse
import timeit

import numpy as np

from nrtr import _kernels_py, kernels
from nrtr import tensor as T

try:
    from nrtr import _ckernels
except ImportError:
    _ckernels = None

# tiny-preset shapes: batch 32, a 96-pixel-wide bucket, both conv layers
CASES = [("layer1", (32, 33, 97, 1), 16, 48), ("layer2", (32, 17, 49, 4), 8, 24)]


def bench(fn, repeat):
    fn()
    return min(timeit.repeat(fn, number=1, repeat=repeat)) * 1e3


def conv_step(impl, x, k):
    saved = kernels.im2col, kernels.col2im
    kernels.im2col, kernels.col2im = impl.im2col, impl.col2im
    try:
        xt = T.parameter(x)
        out = T.conv2d(xt, T.parameter(k))
        T.backward(T.sum(out), [xt])
    finally:
        kernels.im2col, kernels.col2im = saved


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    gen = np.random.default_rng(0)
    impls = [("python", _kernels_py)] + ([("cython", _ckernels)] if _ckernels else [])
    print(f"active backend: {kernels.BACKEND}")
    print("case\tkernel\t" + "\t".join(f"{n}_ms" for n, _ in impls) + ("\tspeedup" if len(impls) > 1 else ""))
    for name, shape, ho, wo in CASES:
        xp = gen.random(shape, dtype=np.float32)
        cols = _kernels_py.im2col(xp, 3, 3, 2, ho, wo)
        grad = gen.random(cols.shape, dtype=np.float32)
        for label, fn in (("im2col", lambda m: m.im2col(xp, 3, 3, 2, ho, wo)),
                          ("col2im", lambda m: m.col2im(grad, shape[1], shape[2], 2))):
            times = [bench(lambda m=m: fn(m), args.repeat) for _, m in impls]
            row = f"{name}\t{label}\t" + "\t".join(f"{t:.3f}" for t in times)
            print(row + (f"\t{times[0] / times[1]:.2f}x" if len(times) > 1 else ""))
        x = gen.random((shape[0], shape[1] - 1, shape[2] - 1, shape[3]), dtype=np.float32)
        k = gen.normal(size=(3, 3, shape[3], shape[3] * 2 if shape[3] > 1 else 4)).astype(np.float32)
        times = [bench(lambda m=m: conv_step(m, x, k), args.repeat) for _, m in impls]
        row = f"{name}\tconv fwd+bwd\t" + "\t".join(f"{t:.3f}" for t in times)
        print(row + (f"\t{times[0] / times[1]:.2f}x" if len(times) > 1 else ""))


if __name__ == "__main__":
    main()
