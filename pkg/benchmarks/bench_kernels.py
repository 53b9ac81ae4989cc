"""Timing of the capped-simplex kernel (numba vs numpy) and of a full run.

Usage::

    python benchmarks/bench_kernels.py [--n 225] [--reps 2000]

The end-to-end part runs the outer-reflected scheme on a synthetic
225-asset portfolio. Run it twice, with and without ``MOMSPLIT_NUMBA=0``,
to compare the two backends inside the solver.
"""

import argparse
import timeit

import numpy as np

from momsplit import _kernels
from momsplit import conditions as cond
from momsplit.problems import build_portfolio
from momsplit.solvers import SolverConfig, StopRule, run


def bench_projection(n, reps, seed=0):
    rng = np.random.default_rng(seed)
    w = rng.normal(0.0, 0.1, n) + 1.0 / n
    d = np.ones(n)
    rows = []
    impls = [("numpy", _kernels.capped_simplex_numpy)]
    if _kernels.nb is not None:
        _kernels.capped_simplex_numba(w, d)  # compile outside the timer
        impls.append(("numba", _kernels.capped_simplex_numba))
    ref = _kernels.capped_simplex_numpy(w, d)
    for name, fn in impls:
        assert np.allclose(fn(w, d), ref, atol=1e-12)
        t = min(timeit.repeat(lambda: fn(w, d), number=reps, repeat=3)) / reps
        rows.append((name, t))
    return rows


def bench_solver(n, seed=0, max_iter=20_000):
    rng = np.random.default_rng(seed)
    F = rng.normal(size=(n, 10)) * 0.02
    H = F @ F.T + 1e-4 * np.eye(n)
    means = rng.uniform(-0.008, 0.004, n)
    groups = (n // 3, n // 3, n - 2 * (n // 3))
    inst, triple = build_portfolio(means, H, 0.001, groups=groups)
    gamma, _ = cond.best_gamma_alg3(inst.mu, inst.beta, 0.0)
    cfg = SolverConfig("orfbs", gamma=gamma, stop=StopRule(1e-6, max_iter=max_iter))
    tr = run(cfg, triple, inst.start())
    return tr


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=225)
    ap.add_argument("--reps", type=int, default=2000)
    args = ap.parse_args(argv)

    print(f"backend in use: {'numba' if _kernels.NUMBA_ENABLED else 'numpy'}")
    for name, t in bench_projection(args.n, args.reps):
        print(f"capped simplex n={args.n:<5d} {name:<6s} {1e6 * t:9.2f} us/call")
    tr = bench_solver(args.n)
    print(f"orfbs portfolio n={args.n}: {tr.status}, {len(tr.E)} iters, "
          f"{tr.time_s:.2f} s ({1e6 * tr.time_s / max(len(tr.E), 1):.1f} us/iter)")


if __name__ == "__main__":
    main()
