"""Compare the compiled and numpy conv1d kernels on the model's layer shapes.

    python3 benchmarks/bench_conv.py [--repeat 5] [--dtype float32] [--threads 1]

Each row times forward, backward-input and backward-weight for one layer
shape and reports the best of ``--repeat`` runs. The "routed" column is the
backend the library actually uses for that shape.
"""
import argparse
import timeit

import numpy as np
from threadpoolctl import threadpool_limits

from dsms.diffcore import _conv_numpy, kernels

# name, c_in, c_out, K, dilation, stride, T_out
SHAPES = [
    ("tcn block d=8", 32, 32, 13, 8, 1, 24000),
    ("tcn block d=128", 32, 32, 13, 128, 1, 24000),
    ("tcn 1x1 skip", 32, 32, 1, 1, 1, 24000),
    ("enc res k7 d=9", 8, 8, 7, 9, 1, 24576),
    ("enc res k7 d=3 wide", 64, 64, 7, 3, 1, 1536),
    ("enc down s=4", 64, 128, 8, 1, 4, 384),
    ("enc down s=2", 8, 16, 4, 1, 2, 12288),
]


def bench(fn, repeat):
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dtype", default="float32", choices=("float32", "float64"))
    ap.add_argument("--threads", type=int, default=None, help="BLAS threads (default: library default)")
    args = ap.parse_args()

    if kernels.compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation` first")
    rng = np.random.default_rng(0)
    dt = np.dtype(args.dtype)
    print(f"dtype {dt.name}, best of {args.repeat}; times in ms")
    print(f"{'shape':22s} {'op':8s} {'cython':>9s} {'numpy':>9s} {'speedup':>8s}  routed")
    with threadpool_limits(limits=args.threads):
        for name, ci, co, K, d, s, t_out in SHAPES:
            t_pad = (t_out - 1) * s + d * (K - 1) + 1
            x = rng.standard_normal((ci, t_pad)).astype(dt)
            w = rng.standard_normal((co, ci, K)).astype(dt)
            g = rng.standard_normal((co, t_out)).astype(dt)
            ops = {
                "fwd": (lambda m: m.conv1d_forward(x, w, d, s, t_out), kernels._pick(s, K)),
                "bwd_in": (lambda m: m.conv1d_backward_input(g, w, d, s, t_pad), kernels._pick(s, K)),
                "bwd_w": (lambda m: m.conv1d_backward_weight(g, x, K, d, s), kernels.active),
            }
            for op, (call, routed) in ops.items():
                a = call(kernels.compiled)
                b = call(_conv_numpy)
                err = np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-30)
                if err > (1e-4 if dt == np.float32 else 1e-10):
                    raise SystemExit(f"{name} {op}: backends disagree (relative error {err:.2e})")
                tc = bench(lambda: call(kernels.compiled), args.repeat) * 1e3
                tn = bench(lambda: call(_conv_numpy), args.repeat) * 1e3
                which = "cython" if routed is kernels.compiled else "numpy"
                print(f"{name:22s} {op:8s} {tc:9.2f} {tn:9.2f} {tn / tc:7.2f}x  {which}")


if __name__ == "__main__":
    main()
