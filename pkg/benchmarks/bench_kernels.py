"""Benchmark the numba kernels against the pure-numpy fallbacks.

Usage:
    python benchmarks/bench_kernels.py            # kernel microbenchmarks
    python benchmarks/bench_kernels.py --end-to-end   # also time a small fit
                                                      # under each backend

The microbenchmarks call both backend implementations directly from one
process. The end-to-end comparison spawns subprocesses because the backend
is fixed at import time via DISAGG_USE_NUMBA.
"""

import argparse
import os
import subprocess
import sys
import time

import numpy as np

from disagg import _kernels


def timeit(fn, *args, min_time=0.5, repeat=3):
    fn(*args)  # warm up (JIT compile on the numba path)
    best = float("inf")
    for _ in range(repeat):
        n = 0
        t0 = time.perf_counter()
        while True:
            fn(*args)
            n += 1
            dt = time.perf_counter() - t0
            if dt >= min_time:
                break
        best = min(best, dt / n)
    return best


def loglik_inputs(rng, I, C, T, rank):
    grid = np.linspace(0.0, 2.0, T)
    eta = rng.uniform(0.5, 1.5, (C, T))
    phis = rng.uniform(0.5, 4.0, C)
    corr = np.stack([np.exp(-p * np.abs(grid[:, None] - grid[None, :]))
                     for p in phis])
    cw = rng.uniform(0.5, 2.0, (I, C))
    sfac = rng.normal(0, 1, (I, T, max(rank, 1)))
    ranks = np.full(I, rank, dtype=np.int64)
    resid = rng.normal(0, 1, (I, T))
    L = np.zeros((I, T, T))
    logdet = np.zeros(I)
    trs = np.zeros(I)
    return (eta, corr, cw, sfac, ranks, resid, 1.0, _kernels.JITTER_LADDER,
            L, logdet, trs)


def main(argv=None):
    parser = argparse.ArgumentParser()
    parser.add_argument("--end-to-end", action="store_true",
                        help="also benchmark a small MCMC fit per backend")
    args = parser.parse_args(argv)

    if "numba" not in _kernels.IMPLS:
        print("numba unavailable; nothing to compare")
        return 1

    rng = np.random.default_rng(0)
    knots = np.concatenate([np.zeros(4), np.linspace(0, 2, 12)[1:-1],
                            np.full(4, 2.0)])
    K = knots.shape[0] - 4
    tvals = rng.uniform(0, 2, 1000)
    coeffs = rng.normal(0, 1, K)
    grid50 = np.linspace(0, 2, 50)

    cases = [
        ("basis_matrix (1000 pts, K=14)", "basis_matrix",
         (knots, 3, tvals)),
        ("curve_eval (1000 pts, K=14)", "curve_eval",
         (knots, 3, coeffs, tvals)),
        ("corr_matrix (50x50)", "corr_matrix", (1.5, grid50, grid50)),
        ("cov_loglik (I=30, T=50, J=1)", "cov_loglik",
         loglik_inputs(rng, I=30, C=2, T=50, rank=0)),
        ("cov_loglik (I=3, T=50, rank=14)", "cov_loglik",
         loglik_inputs(rng, I=3, C=2, T=50, rank=14)),
    ]
    ll = loglik_inputs(rng, I=30, C=2, T=50, rank=0)
    _kernels.IMPLS["numpy"]["cov_loglik"](*ll)
    X = rng.normal(0, 1, (30, 50, 28))
    ybar = rng.normal(0, 1, (30, 50))
    cases.append(("beta_suffstats (I=30, T=50, P=28)", "beta_suffstats",
                  (ll[8], X, ybar, 1.0)))

    print(f"{'kernel':40s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for label, name, inputs in cases:
        t_nb = timeit(_kernels.IMPLS["numba"][name], *inputs)
        t_np = timeit(_kernels.IMPLS["numpy"][name], *inputs)
        print(f"{label:40s} {t_nb * 1e6:10.1f}us {t_np * 1e6:10.1f}us "
              f"{t_np / t_nb:8.1f}x")

    if args.end_to_end:
        snippet = (
            "import time, numpy as np\n"
            "from disagg import simulate as sim, inference as inf\n"
            "from disagg.basis import equispaced_basis\n"
            "import disagg\n"
            "sc = sim.get_preset('case1_I30')\n"
            "data = sim.generate(sc, np.random.default_rng(7))\n"
            "basis = equispaced_basis(10, (0.0, 2.0))\n"
            "prior = inf.default_prior(sc.cov_spec, basis, data.grid)\n"
            "cfg = inf.McmcConfig(n_iter=1000, burn_in=200, thin=4, seed=1,"
            " n_chains=1)\n"
            "inf.run_mcmc(data, basis, sc.cov_spec, prior, cfg)\n"
            "t0 = time.perf_counter()\n"
            "inf.run_mcmc(data, basis, sc.cov_spec, prior, cfg)\n"
            "print(f'{disagg.active_backend()}: "
            "{time.perf_counter() - t0:.2f}s / 1000 iterations')\n")
        print("\nend-to-end (case1_I30, 1000 iterations, single chain):",
              flush=True)
        for flag in ("1", "0"):
            env = dict(os.environ, DISAGG_USE_NUMBA=flag)
            subprocess.run([sys.executable, "-c", snippet], env=env,
                           check=True)
    return 0


if __name__ == "__main__":
    sys.exit(main())
