"""Scheme ordering on synthetic Gaussian-mixture data, for machines without MNIST.

This is a stand-in only: it exercises the same paired-seed protocol as the
MNIST ordering check but its numbers say nothing about MNIST.
"""
import argparse
import time

from aircomp_fl.config import SystemConfig
from aircomp_fl.harness import ordering_experiment

ORDER = ["fedavg-ideal", "proposed", "mse-threshold", "truncated-inversion"]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--seeds", type=int, default=5)
    ap.add_argument("--rounds", type=int, default=100)
    args = ap.parse_args()
    for partition in ("iid", "noniid"):
        cfg = SystemConfig(T=args.rounds, partition=partition, mu2=0.0, delta=0.0)
        t0 = time.perf_counter()
        res = ordering_experiment(cfg, range(args.seeds), ORDER)
        accs = "  ".join(f"{s}={res[s]:.4f}" for s in ORDER)
        ok = all(res[a] >= res[b] for a, b in zip(ORDER, ORDER[1:]))
        print(f"{partition:<7} {accs}  ordering_holds={ok}  ({time.perf_counter() - t0:.0f} s)")


if __name__ == "__main__":
    main()
