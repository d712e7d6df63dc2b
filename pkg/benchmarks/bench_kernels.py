"""Compare the compiled and numpy kernel backends on FeTa-sized inputs.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Times each hot-loop kernel and one full ``feta`` run per backend, and checks
that both backends return the same numbers.
"""
import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from fetaprune import kernels
from fetaprune.linalg import make_rng

FETA_SNIPPET = """
import time, numpy as np
from fetaprune.experiments import fixture, prune_layer
from fetaprune.pruner import FetaConfig
fx = fixture()
t0 = time.perf_counter()
_, res = prune_layer(fx.net, 1, fx.train.X, "feta", 0.9, FetaConfig(seed=0))
print(time.perf_counter() - t0, res.sparsity, res.layer_error)
"""


def kernel_cases(rng):
    d_in, d_out, batch = 65, 32, 200
    Z = rng.standard_normal((d_out, batch))
    B = np.maximum(rng.standard_normal((d_out, batch)), 0)
    U = rng.standard_normal((d_in, d_out))
    Y = rng.standard_normal((d_in, d_out))
    X = rng.standard_normal((d_in, d_out))
    return {
        "softplus": lambda k: k.softplus(Z, 20.0),
        "sq_grad_factor": lambda k: k.sq_grad_factor(Z, 20.0),
        "cross_grad_factor": lambda k: k.cross_grad_factor(Z, B, 20.0),
        "dc_sums": lambda k: k.dc_sums(Z, B, 20.0),
        "soft_threshold": lambda k: k.soft_threshold(U, 0.1, d_in - 1),
        "prox_momentum_step": lambda k: k.prox_momentum_step(Y, U, X, 1e-3, 1e-4, 0.95, d_in - 1),
    }


def _flat(out):
    parts = out if isinstance(out, tuple) else (out,)
    return np.concatenate([np.ravel(np.asarray(x, dtype=np.float64)) for x in parts])


def main():
    p = argparse.ArgumentParser()
    p.add_argument("--repeat", type=int, default=2000)
    args = p.parse_args()
    names = kernels.available_backends()
    if "cython" not in names:
        print("compiled backend not built; only the numpy backend is available")
    mods = {n: kernels.get_backend(n) for n in names}
    cases = kernel_cases(make_rng(0))
    print(f"{'kernel':<20}" + "".join(f"{n + ' (us)':>14}" for n in names) + f"{'speedup':>10}")
    for name, fn in cases.items():
        times = {n: min(timeit.repeat(lambda: fn(m), number=args.repeat, repeat=3)) / args.repeat * 1e6
                 for n, m in mods.items()}
        if len(mods) == 2:
            a, b = (_flat(fn(m)) for m in mods.values())
            assert np.allclose(a, b, rtol=1e-12, atol=1e-14), f"backends disagree on {name}"
        speed = times["python"] / times["cython"] if "cython" in times else float("nan")
        print(f"{name:<20}" + "".join(f"{times[n]:>14.2f}" for n in names) + f"{speed:>10.2f}")
    print("\nfull feta run (fixture layer 1, 90% sparsity):")
    for n in names:
        env = dict(os.environ, FETAPRUNE_BACKEND=n)
        out = subprocess.run([sys.executable, "-c", FETA_SNIPPET], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {n:<8} {float(out[0]):7.2f} s  sparsity={float(out[1]):.4f}  layer_error={float(out[2]):.4f}")


if __name__ == "__main__":
    main()
