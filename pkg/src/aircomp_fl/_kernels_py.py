"""Numpy fallbacks for the compiled kernels; same signatures and results."""
from __future__ import annotations

import numpy as np

_CHUNK = 1 << 18


def ratio_grid_search(theta, c, qd, budget, sum_mode, ub, resolution):
    theta = np.asarray(theta, dtype=float)
    qd = np.asarray(qd, dtype=float)
    budget = np.asarray(budget, dtype=float)
    ub = np.asarray(ub, dtype=float)
    K = theta.size
    total = resolution ** K
    axes = [ub[k] * np.arange(resolution) / (resolution - 1) for k in range(K)]
    best, best_flat, best_lam2 = np.inf, 0, 0.0
    for start in range(0, total, _CHUNK):
        flat = np.arange(start, min(start + _CHUNK, total))
        # odometer order: axis 0 varies fastest
        digits = np.stack([(flat // resolution ** k) % resolution for k in range(K)], axis=1)
        P = np.stack([axes[k][digits[:, k]] for k in range(K)], axis=1)
        num = (P * P) @ theta
        den = P.sum(axis=1)
        with np.errstate(divide="ignore", invalid="ignore"):
            if sum_mode:
                lam2 = budget[0] / ((P * P) @ qd)
            else:
                ratio = np.where(P > 0, budget / (qd * P * P), np.inf)
                lam2 = ratio.min(axis=1)
            obj = np.where(den > 0, (num + c / lam2) / (den * den), np.inf)
        j = int(np.argmin(obj))
        if obj[j] < best:
            best, best_flat, best_lam2 = float(obj[j]), int(flat[j]), float(lam2[j])
    point = np.array([axes[k][(best_flat // resolution ** k) % resolution] for k in range(K)])
    return point, float(np.sqrt(best_lam2)), best
