"""Compare the compiled and pure-Python kernels on representative inputs.

Run ``python benchmarks/bench_kernels.py``. Prints the median wall time of
each kernel on each backend and the speedup; exits non-zero if the compiled
extension is not built.
"""
import argparse
import sys
import timeit

import numpy as np

from profilenet import _kernels
from profilenet.linalg import correlation_matrix


def estep_case(rng, n=2000, K=5, d=6):
    X = rng.standard_normal((n, d))
    means = rng.standard_normal((K, d))
    linv = np.array([np.eye(d)] * K)
    const = np.full(K, -np.log(K))
    return lambda mod: mod.estep(X, means, linv, const, np.empty((n, K)))


def glasso_case(rng, d=12):
    S = correlation_matrix(rng.standard_normal((200, d)) @ rng.standard_normal((d, d)))

    def run(mod):
        mod.glasso_cd(S, 0.1, S.copy(), np.zeros((d, d)), 1e-6, 500, 1e-8, 1000)
    return run


def brandes_case(rng, d=15):
    W = np.triu(rng.uniform(-1, 1, (d, d)) * (rng.random((d, d)) < 0.4), 1)
    W = np.ascontiguousarray(W + W.T)
    return lambda mod: mod.brandes(W, 1e-12)


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=7)
    args = parser.parse_args(argv)
    if _kernels.compiled is None:
        print("compiled kernels not built; run `pip install -e . --no-build-isolation`", file=sys.stderr)
        return 1
    rng = np.random.default_rng(0)
    cases = {"estep n=2000 K=5 d=6": estep_case(rng), "glasso_cd d=12": glasso_case(rng),
             "brandes d=15": brandes_case(rng)}
    print(f"{'kernel':<24}{'cython (ms)':>14}{'python (ms)':>14}{'speedup':>10}")
    for name, run in cases.items():
        times = {}
        for label, mod in (("cython", _kernels.compiled), ("python", _kernels.python)):
            timer = timeit.Timer(lambda: run(mod))
            number, _ = timer.autorange()
            times[label] = 1e3 * float(np.median(timer.repeat(args.repeat, number))) / number
        print(f"{name:<24}{times['cython']:>14.3f}{times['python']:>14.3f}"
              f"{times['python'] / times['cython']:>9.1f}x")
    return 0


if __name__ == "__main__":
    sys.exit(main())
