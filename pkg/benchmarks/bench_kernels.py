"""Benchmark the numba kernels against their pure-numpy fallbacks.

Runs the two hot paths -- the MWG posterior scan and the Gauss-Hermite
marginal log-likelihood over a draw batch -- on a mid-size problem with both
backends, reports wall times and speedups, and checks the outputs agree.

Usage:  python benchmarks/bench_kernels.py [--cases 200] [--kept 1500]
"""

import argparse
import time

import numpy as np

from prodmc.core import make_streams
from prodmc.latent import (ModelConfig, marginal_loglik_draws, mwg_sample,
                           simulate_dataset)
from prodmc.quadrature import gauss_hermite, tensor_rule


def time_call(fn, repeats=1):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--cases", type=int, default=200)
    parser.add_argument("--items", type=int, default=6)
    parser.add_argument("--factors", type=int, default=2)
    parser.add_argument("--kept", type=int, default=1500)
    parser.add_argument("--burn-in", type=int, default=500)
    parser.add_argument("--quad-order", type=int, default=21)
    args = parser.parse_args()

    config = ModelConfig(n_items=args.items, n_cases=args.cases,
                         n_factors=args.factors)
    streams = make_streams(20240)
    data, _, _ = simulate_dataset(config, streams.stream(0))

    print(f"problem: {args.items} items x {args.cases} cases, "
          f"k={args.factors}, {args.kept} kept draws")

    # warm up the JIT so compile time is not billed to the kernel
    mwg_sample(data, config, n_kept=2, burn_in=2, thin=1,
               rng=streams.stream(9), use_numba=True)

    def run_mwg(use_numba):
        return mwg_sample(data, config, n_kept=args.kept,
                          burn_in=args.burn_in, thin=2,
                          rng=streams.stream(1), use_numba=use_numba)

    t_numba, draws_nb = time_call(lambda: run_mwg(True))
    t_numpy, draws_np = time_call(lambda: run_mwg(False))
    agree = np.allclose(draws_nb.intercepts, draws_np.intercepts, rtol=1e-8)
    print(f"mwg scan:            numba {t_numba:7.2f}s   numpy {t_numpy:7.2f}s"
          f"   speedup {t_numpy / t_numba:5.1f}x   chains agree: {agree}")

    rule = tensor_rule(gauss_hermite(args.quad_order), args.factors)
    subset = slice(0, min(args.kept, 500))

    def run_mll(use_numba):
        return marginal_loglik_draws(draws_nb.intercepts[subset],
                                     draws_nb.loadings[subset], data, rule,
                                     use_numba=use_numba)

    marginal_loglik_draws(draws_nb.intercepts[:2], draws_nb.loadings[:2],
                          data, rule, use_numba=True)  # JIT warm-up
    t_numba, mll_nb = time_call(lambda: run_mll(True))
    t_numpy, mll_np = time_call(lambda: run_mll(False))
    agree = np.allclose(mll_nb, mll_np, rtol=1e-10)
    print(f"marginal loglik:     numba {t_numba:7.2f}s   numpy {t_numpy:7.2f}s"
          f"   speedup {t_numpy / t_numba:5.1f}x   values agree: {agree}")


if __name__ == "__main__":
    main()
