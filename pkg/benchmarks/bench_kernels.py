"""Compiled vs numpy im2col/col2im, and a conv2d forward/backward on top of each.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 128]

Both backends are imported directly, so one process times both. Outputs are
checked for bitwise equality before timing.
"""

import argparse
import timeit

import numpy as np

from cldl import _kernels_py, kernels
from cldl import tensor as T

try:
    from cldl import _kernels as _kernels_c
except ImportError:
    _kernels_c = None


def best_ms(fn, repeat, number=1):
    return 1e3 * min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def conv_step(x, w, b):
    out = T.conv2d(x, w, b)
    T.grad(T.tsum(out * out), [x, w, b])


def use_backend(impl):
    kernels._impl = impl


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=128)
    args = ap.parse_args(argv)
    if _kernels_c is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")

    rng = np.random.default_rng(0)
    shapes = [("conv1 28x28, 1->8", (args.batch, 1, 28, 28), 3),
              ("conv2 13x13, 8->16", (args.batch, 8, 13, 13), 3)]
    backends = [("numpy", _kernels_py), ("cython", _kernels_c)]
    rows = []
    for label, shape, k in shapes:
        x = rng.random(shape)
        cols = {name: impl.im2col(x, k, k, 1) for name, impl in backends}
        assert np.array_equal(cols["numpy"], cols["cython"])
        back = {name: impl.col2im(cols["numpy"], shape, k, k, 1) for name, impl in backends}
        assert np.array_equal(back["numpy"], back["cython"])

        c_out = 8 if shape[1] == 1 else 16
        xt = T.Tensor(x, requires_grad=True)
        wt = T.Tensor(rng.normal(size=(c_out, shape[1], k, k)), requires_grad=True)
        bt = T.Tensor(np.zeros(c_out), requires_grad=True)
        timings = {}
        for name, impl in backends:
            timings[name] = (
                best_ms(lambda: impl.im2col(x, k, k, 1), args.repeat),
                best_ms(lambda: impl.col2im(cols["numpy"], shape, k, k, 1), args.repeat),
            )
            use_backend(impl)
            timings[name] += (best_ms(lambda: conv_step(xt, wt, bt), max(3, args.repeat // 4)),)
        rows.append((label, timings))
    use_backend(_kernels_c)

    print(f"batch {args.batch}, best of {args.repeat} (ms)")
    head = f"{'shape':<20} {'op':<18} {'numpy':>9} {'cython':>9} {'speedup':>8}"
    print(head)
    print("-" * len(head))
    for label, t in rows:
        for i, op in enumerate(("im2col", "col2im", "conv fwd+bwd")):
            a, c = t["numpy"][i], t["cython"][i]
            print(f"{label:<20} {op:<18} {a:9.3f} {c:9.3f} {a / c:7.2f}x")


if __name__ == "__main__":
    main()
