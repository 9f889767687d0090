"""Regenerate the SDP regression fixtures.

Each fixture holds a problem, an optional gap-problem source and the optimal
value computed by an independent conic solver (CLARABEL through cvxpy).
Run from the repository root: ``python tests/fixtures/make_fixtures.py``.
"""
import json
from pathlib import Path

import cvxpy as cp
import numpy as np

from aircomp_fl.channels import draw_round_channels
from aircomp_fl.config import SystemConfig
from aircomp_fl.optimizer import GapProblem, build_problem, homogenize
from aircomp_fl.sdp import SdpStandardForm

HERE = Path(__file__).resolve().parent


def reference_value(prob: SdpStandardForm) -> float:
    Z = cp.Variable((prob.n, prob.n), symmetric=True)
    cons = [Z >> 0] + [cp.trace(A @ Z) == b for A, b in prob.eq] + [cp.trace(G @ Z) <= h for G, h in prob.ineq]
    val = cp.Problem(cp.Minimize(cp.trace(prob.obj @ Z)), cons).solve(
        solver="CLARABEL", tol_gap_abs=1e-12, tol_gap_rel=1e-12, tol_feas=1e-12)
    return float(val)


def gap_instance(seed, K, mode, d=500):
    rng = np.random.default_rng(seed)
    cfg = SystemConfig(K=K, d=d, constraint_mode=mode)
    ch = draw_round_channels(rng, K)
    w2 = d * 0.01 * rng.uniform(0.5, 2)
    return build_problem(ch.gain_dl, ch.gain_up, w2 * rng.uniform(0.5, 2, size=K), cfg, cfg.eta0, w2)


def main():
    cases = {
        "min_eig_2": (SdpStandardForm(np.diag([1.0, 2.0]), [(np.eye(2), 1.0)]), None),
        "identity_obj_3": (SdpStandardForm(np.eye(3), [(np.eye(3), 1.0)]), None),
    }
    analytic = {
        "gap_k1_individual": GapProblem(np.array([1.0]), 10.0, np.array([4.0]), np.array([16.0]), "individual"),
        "gap_k2_sum_c0": GapProblem(np.ones(2), 0.0, np.ones(2), np.array([2.0]), "sum"),
        "gap_k2_weak_downlink": GapProblem(np.array([1e6, 1.0]), 1.0, np.ones(2), np.array([1.0, 1.0]), "individual"),
    }
    for name, gp in analytic.items():
        cases[name] = (homogenize(gp), gp)
    for seed, K, mode in [(1, 3, "individual"), (2, 3, "sum"), (3, 20, "individual"), (4, 20, "sum"),
                          (5, 10, "individual")]:
        gp = gap_instance(seed, K, mode)
        cases[f"gap_k{K}_{mode}_s{seed}"] = (homogenize(gp), gp)
    # small-norm model early in training: objective ~1e-5, needs a relative gap test
    small = gap_instance(6, 20, "individual")
    small = GapProblem(small.theta * 1e-3, small.c, small.q_diag * 1e-3, small.budgets, small.mode)
    cases["gap_k20_small_objective"] = (homogenize(small), small)
    for name, (prob, gp) in cases.items():
        doc = {"problem": prob.to_dict(), "reference_value": reference_value(prob)}
        if gp is not None:
            doc["gap_problem"] = gp.to_dict()
        with open(HERE / f"sdp_{name}.json", "w") as fh:
            json.dump(doc, fh, indent=1)
        print(name, doc["reference_value"])


if __name__ == "__main__":
    main()
