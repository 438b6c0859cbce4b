"""Time the numpy kernels against the compiled ones.

Run from the repo root after an editable install:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --batch 60 --repeat 10
"""
import argparse
import time

import numpy as np

from attrivis._kernels import _ref

try:
    from attrivis._kernels import _core
except ImportError:
    _core = None


def timeit(fn, *args, repeat):
    fn(*args)  # warm up
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_shape(label, n, ci, co, side, k, pad, repeat):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(n, ci, side, side))
    w = rng.normal(size=(co, ci, k, k))
    b = rng.normal(size=co)
    out = _ref.conv_forward(x, w, b, 1, pad)
    go = rng.normal(size=out.shape)

    cases = [
        ("conv_forward", lambda m: timeit(m.conv_forward, x, w, b, 1, pad, repeat=repeat)),
        ("conv_backward", lambda m: timeit(m.conv_backward, go, x, w, 1, pad, repeat=repeat)),
        ("conv_input_grad", lambda m: timeit(m.conv_input_grad, go, w, side, side, 1, pad, repeat=repeat)),
        ("maxpool_forward", lambda m: timeit(m.maxpool_forward, x, 2, 2, repeat=repeat)),
    ]
    print(f"\n{label}  (batch={n}, {ci}->{co} ch, {side}x{side}, k={k})")
    for name, run in cases:
        t_ref = run(_ref)
        if _core is None:
            print(f"  {name:<16} numpy {t_ref*1e3:7.2f} ms   compiled: not built")
            continue
        t_core = run(_core)
        print(f"  {name:<16} numpy {t_ref*1e3:7.2f} ms   compiled {t_core*1e3:7.2f} ms"
              f"   x{t_ref/t_core:.2f}")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=60)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()

    if _core is None:
        print("compiled kernels not importable; showing numpy timings only")

    n = args.batch
    bench_shape("first conv layer", n, 3, 16, 60, 5, 2, args.repeat)
    bench_shape("middle conv layer", n, 16, 32, 30, 5, 2, args.repeat)
    bench_shape("small-net layer", n, 4, 8, 60, 3, 1, args.repeat)


if __name__ == "__main__":
    main()
