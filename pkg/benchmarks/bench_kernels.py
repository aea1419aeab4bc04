"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--batch 32] [--length 40] [--hidden 200]

Shapes default to one encoder batch at the paraphrase preset (40 tokens,
hidden size 200). Prints the best-of-N time per call for each backend and
the speedup.
"""
import argparse
import timeit

import numpy as np

from rtl import kernels


def make_inputs(batch, length, hidden, seed=0):
    rng = np.random.default_rng(seed)
    lens = rng.integers(length // 2, length + 1, size=(2, batch))
    mask1 = (np.arange(length)[None, :] < lens[0][:, None]).astype(float)
    mask2 = (np.arange(length)[None, :] < lens[1][:, None]).astype(float)
    f1, f2, x1, x2 = (rng.normal(size=(batch, length, hidden)) for _ in range(4))
    return f1, f2, x1, x2, mask1, mask2


def cases(inputs):
    f1, f2, x1, x2, mask1, mask2 = inputs
    p_row, p_col, eps2, eps1 = kernels.attention_forward(f1, f2, x1, x2, mask1, mask2)
    vsum, vmax, argmax = kernels.pool_forward(x1, mask1)
    u = np.random.default_rng(1).dirichlet(np.ones(5000))
    v = np.random.default_rng(2).dirichlet(np.ones(5000))
    return {
        "attention_forward": lambda: kernels.attention_forward(f1, f2, x1, x2, mask1, mask2),
        "attention_backward": lambda: kernels.attention_backward(eps2, eps1, p_row, p_col, f1, f2, x1, x2),
        "pool_forward": lambda: kernels.pool_forward(x1, mask1),
        "pool_backward": lambda: kernels.pool_backward(vsum, vmax, argmax, mask1),
        "cdf_l1 (5000 terms)": lambda: kernels.cdf_l1(u, v),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--batch", type=int, default=32)
    ap.add_argument("--length", type=int, default=40)
    ap.add_argument("--hidden", type=int, default=200)
    args = ap.parse_args()

    backends = [b for b in ("python", "compiled") if b in kernels.BACKENDS]
    if "compiled" not in backends:
        print("compiled extension not built; timing the numpy fallback only")
    inputs = make_inputs(args.batch, args.length, args.hidden)
    timings = {}
    for backend in backends:
        kernels.use_backend(backend)
        for name, fn in cases(inputs).items():
            fn()  # warm up
            timings[name, backend] = min(timeit.repeat(fn, number=1, repeat=args.repeat))
    kernels.use_backend(kernels._pick())

    print(f"batch={args.batch} length={args.length} hidden={args.hidden} repeat={args.repeat}")
    print(f"{'kernel':24s}" + "".join(f"{b:>14s}" for b in backends) + ("     speedup" if len(backends) == 2 else ""))
    for name in cases(inputs):
        row = f"{name:24s}" + "".join(f"{timings[name, b] * 1e3:12.3f}ms" for b in backends)
        if len(backends) == 2:
            row += f"{timings[name, 'python'] / timings[name, 'compiled']:11.2f}x"
        print(row)


if __name__ == "__main__":
    main()
