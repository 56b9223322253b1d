"""Compiled vs NumPy kernels on the Shapley hot paths.

    python benchmarks/bench_kernels.py [--repeat 5]

Prints one line per (kernel, size) with the best wall time of each backend
and the speedup. The results of both backends are checked to agree first.
"""

import argparse
import sys
import timeit

import numpy as np

from lmidrift import _fallback

try:
    from lmidrift import _kernels
except ImportError:
    _kernels = None


def _inputs(n, C, m, seed=0):
    rng = np.random.default_rng(seed)
    contrib = rng.normal(size=(n, C)) / n
    mask_contrib = rng.normal(size=C) / n
    bias = rng.normal(size=C)
    perms = np.stack([rng.permutation(n) for _ in range(m)]).astype(np.int64)
    return contrib, mask_contrib, bias, perms


def cases():
    for n, m in ((16, 200), (64, 200), (256, 200), (256, 1000)):
        contrib, mc, bias, perms = _inputs(n, 2, m)
        yield f"shapley_walk n={n} m={m}", lambda mod, a=(contrib, mc, bias, 1, perms): mod.shapley_walk_linear(*a)
    for n in (8, 10, 12):
        contrib, mc, bias, _ = _inputs(n, 2, 1)
        yield f"coalition_values n={n}", lambda mod, a=(contrib, mc, bias, 1): mod.coalition_values_linear(*a)
        values = _fallback.coalition_values_linear(contrib, mc, bias, 1)
        yield f"shapley_from_values n={n}", lambda mod, a=(values, n): mod.shapley_from_values(*a)


def _check(a, b):
    a = a if isinstance(a, tuple) else (a,)
    b = b if isinstance(b, tuple) else (b,)
    return all(np.allclose(x, y, rtol=1e-10, atol=1e-12) for x, y in zip(a, b))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    if _kernels is None:
        print("compiled extension not built; only the fallback is available", file=sys.stderr)
        return 1
    print(f"{'case':34s} {'cython ms':>10s} {'numpy ms':>10s} {'speedup':>8s}")
    for name, run in cases():
        if not _check(run(_kernels), run(_fallback)):
            print(f"{name}: backends disagree", file=sys.stderr)
            return 1
        t = {}
        for label, mod in (("cython", _kernels), ("numpy", _fallback)):
            timer = timeit.Timer(lambda: run(mod))
            loops, _ = timer.autorange()
            t[label] = min(timer.repeat(args.repeat, loops)) / loops * 1e3
        print(f"{name:34s} {t['cython']:10.3f} {t['numpy']:10.3f} {t['numpy'] / t['cython']:7.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
