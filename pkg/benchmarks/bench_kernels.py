"""Compare the compiled persistence kernel against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--trials N] [--repeat R]
"""
import argparse
import time

from luckchain import _kernels
from luckchain._kernels import _fallback

CASES = [(2, 1, (1,)), (6, 4, (1, 5, 10, 20)), (60, 40, (1, 5, 10, 20))]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        result = fn()
        times.append(time.perf_counter() - t0)
    return min(times), result


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--trials", type=int, default=8192)
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if _kernels.BACKEND != "cython":
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1
    from luckchain._kernels import _ckernels

    print(f"{'M':>3} {'m':>3} {'h_max':>5} {'trials':>7} {'cython_s':>9} {'numpy_s':>9} {'speedup':>8} same")
    for M, m, hs in CASES:
        args_ = (12345, 0, args.trials, M, m, hs)
        tc, rc = best_of(lambda: _ckernels.persistence_counts(*args_), args.repeat)
        tp, rp = best_of(lambda: _fallback.persistence_counts(*args_), args.repeat)
        print(f"{M:>3} {m:>3} {max(hs):>5} {args.trials:>7} {tc:>9.4f} {tp:>9.4f} {tp / tc:>7.1f}x {rc == rp}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
