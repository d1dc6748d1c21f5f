"""Compare the compiled kernels with the numpy fallback.

Run from the repository root after building the extension:

    python3 benchmarks/bench_kernels.py [--n 20000] [--J 50] [--repeat 20]

Kernel timings call both backends directly.  The end-to-end timing runs
the same fit in a subprocess with and without ``SAEGAMLSS_PURE=1``.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from saegamlss import _core_py

try:
    from saegamlss import _core
except ImportError:
    _core = None

FIT_SNIPPET = """
import time, numpy as np, pandas as pd
from saegamlss import Dataset, LogNormal, ModelSpec, ParamSpec, fit_gamlss, kernels
rng = np.random.default_rng(0)
n, J = {n}, {J}
area = rng.integers(0, J, n)
x1, x2 = rng.standard_normal(n), rng.standard_normal(n)
y = np.exp(7 + x1 + 0.3 * rng.standard_normal(J)[area] + np.exp(-2 + 0.5 * x2) * rng.standard_normal(n))
d = Dataset(pd.DataFrame(dict(area=area, x1=x1, x2=x2, y=y)))
spec = ModelSpec(LogNormal(), dict(mu=ParamSpec(("x1",), None, True), sigma=ParamSpec(("x2",), None, True)))
fit_gamlss(d, spec)
t0 = time.perf_counter()
for _ in range({reps}):
    fit_gamlss(d, spec)
print(kernels.BACKEND, (time.perf_counter() - t0) / {reps})
"""


def problem(n, J, p, seed=0):
    rng = np.random.default_rng(seed)
    X = np.ascontiguousarray(np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))]))
    area = rng.integers(0, J, n).astype(np.intp)
    z = rng.standard_normal(n)
    w = rng.uniform(0.5, 2.0, n)
    return X, z, w, area


def bench(label, fn, repeat):
    best = min(timeit.repeat(fn, number=1, repeat=repeat))
    print(f"  {label:<10s}{1e3 * best:10.3f} ms")
    return best


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000, help="units")
    ap.add_argument("--J", type=int, default=50, help="areas")
    ap.add_argument("--p", type=int, default=3, help="fixed-effect columns")
    ap.add_argument("--repeat", type=int, default=20, help="timing repeats (best is reported)")
    ap.add_argument("--fits", type=int, default=3, help="end-to-end fits per backend")
    args = ap.parse_args(argv)
    X, z, w, area = problem(args.n, args.J, args.p)
    backends = [("numpy", _core_py)] + ([("cython", _core)] if _core is not None else [])
    if _core is None:
        print("compiled extension not built; only the numpy backend is timed")

    results = {}
    for name, fn in (("pwls_re", lambda m: m.pwls_re(X, z, w, area, args.J, 0.5)),
                     ("group_sum", lambda m: m.group_sum(z, area, args.J)),
                     ("wls", lambda m: m.wls(X, z, w))):
        print(f"{name} (n={args.n}, J={args.J}, p={args.p})")
        ref = None
        for label, mod in backends:
            results[(name, label)] = bench(label, lambda: fn(mod), args.repeat)
            out = fn(mod)
            flat = np.concatenate([np.ravel(o) for o in (out if isinstance(out, tuple) else (out,))])
            if ref is None:
                ref = flat
            else:
                print(f"  max abs difference {np.max(np.abs(flat - ref)):.2e}")
        if len(backends) == 2:
            print(f"  speed-up {results[(name, 'numpy')] / results[(name, 'cython')]:.2f}x")

    print(f"end-to-end LogNormal fit (n={args.n}, J={args.J})")
    code = FIT_SNIPPET.format(n=args.n, J=args.J, reps=args.fits)
    for pure in ("1", "0") if _core is not None else ("1",):
        env = dict(os.environ, SAEGAMLSS_PURE=pure)
        out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
        backend, secs = out.stdout.split()
        print(f"  {backend:<10s}{1e3 * float(secs):10.1f} ms per fit")


if __name__ == "__main__":
    main()
