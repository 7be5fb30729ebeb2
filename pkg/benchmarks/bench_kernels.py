"""Compare the compiled kernel routines against the NumPy fallback.

Run from the repository root:

    python3 benchmarks/bench_kernels.py
    python3 benchmarks/bench_kernels.py --sizes 50 200 800 --dim 4

Both implementations are imported directly (dosebo._sqexp and
dosebo._sqexp_py), so the numbers do not depend on which one the package
selected at import time.
"""

import argparse
import timeit

import numpy as np

from dosebo import kernels


def _cases(n, dim, rng):
    x = rng.uniform(0.0, 1.0, size=(n, dim))
    q = rng.uniform(0.0, 1.0, size=(max(4, n // 2), dim))
    ls = rng.uniform(0.3, 2.0, size=dim)
    corr = kernels.PY_IMPL.self_correlation(x, ls)
    weight = rng.normal(size=(n, n))
    weight = weight + weight.T
    return {
        "self_correlation": (x, ls),
        "cross_correlation": (x, q, ls),
        "lengthscale_grad_terms": (x, weight, corr, ls),
    }


def _best(func, args, repeat, loops):
    timer = timeit.Timer(lambda: func(*args))
    return min(timer.repeat(repeat=repeat, number=loops)) / loops


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--sizes", type=int, nargs="+", default=[50, 150, 400])
    parser.add_argument("--dim", type=int, default=3)
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--loops", type=int, default=20)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    if not kernels.USING_EXTENSION:
        print("warning: compiled extension not importable; timing fallback against itself")
    compiled = kernels.ACTIVE_IMPL
    fallback = kernels.PY_IMPL
    rng = np.random.default_rng(args.seed)

    print(f"dim={args.dim}, best of {args.repeat} x {args.loops} loops, times in us")
    header = f"{'routine':<24} {'n':>5} {'numpy':>10} {'compiled':>10} {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for n in args.sizes:
        for name, call_args in _cases(n, args.dim, rng).items():
            ref = getattr(fallback, name)(*call_args)
            out = getattr(compiled, name)(*call_args)
            assert np.allclose(ref, out, rtol=1e-12, atol=1e-14), name
            t_py = _best(getattr(fallback, name), call_args, args.repeat, args.loops)
            t_c = _best(getattr(compiled, name), call_args, args.repeat, args.loops)
            print(f"{name:<24} {n:>5} {t_py * 1e6:>10.1f} {t_c * 1e6:>10.1f} "
                  f"{t_py / t_c:>7.1f}x")


if __name__ == "__main__":
    main()
