"""Grid-oracle kernel: compiled extension against the numpy fallback.

    python benchmarks/bench_kernels.py --res 200 --repeat 3
"""
import argparse
import time

import numpy as np

from aircomp_fl import _kernels_py

try:
    from aircomp_fl import _kernels
except ImportError:
    _kernels = None


def instance(rng, K, sum_mode, res):
    theta = rng.uniform(0.01, 5.0, K)
    q = rng.uniform(0.1, 3.0, K)
    budget = np.array([rng.uniform(1, 10)]) if sum_mode else rng.uniform(1, 10, K)
    ub = np.sqrt((budget[0] if sum_mode else budget) / q)
    return theta, float(rng.uniform(0, 3)), q, budget, sum_mode, ub, res


def best_time(fn, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn(*args)
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--res", type=int, default=200)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not built; run `pip install -e .` first")
    rng = np.random.default_rng(args.seed)
    print(f"{'K':>2} {'mode':<11}{'points':>10}{'python s':>11}{'compiled s':>12}{'speedup':>9}  agree")
    for K in (1, 2, 3):
        for sum_mode in (False, True):
            inst = instance(rng, K, sum_mode, args.res)
            tp, (_, _, op) = best_time(_kernels_py.ratio_grid_search, inst, args.repeat)
            if _kernels is None:
                print(f"{K:>2} {'sum' if sum_mode else 'individual':<11}{args.res ** K:>10}{tp:>11.4f}")
                continue
            tc, (_, _, oc) = best_time(_kernels.ratio_grid_search, inst, args.repeat)
            agree = abs(oc - op) <= 1e-12 * abs(op)
            print(f"{K:>2} {'sum' if sum_mode else 'individual':<11}{args.res ** K:>10}"
                  f"{tp:>11.4f}{tc:>12.4f}{tp / tc:>9.1f}  {agree}")


if __name__ == "__main__":
    main()
