"""Convergence-bound calculator and empirical audits of its ingredients.

``A_of_t`` is the per-round contraction factor, ``G_of_t`` the per-round gap
split into its four sources (gradient variance, heterogeneity, downlink noise,
uplink noise), and ``optimality_gap`` accumulates them over a run.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .rng import Purpose, stream


class BoundError(ValueError):
    pass


def _denominator(eta: float, E: int, L: float) -> float:
    den = 1.0 - 4.0 * eta * eta * E * E * L * L
    if den <= 0:
        raise BoundError(f"1 - 4 eta^2 E^2 L^2 = {den:.3g} is not positive (eta={eta:g})")
    return den


def A_of_t(eta: float, E: int, L: float) -> float:
    """``1 + eta E L (20 eta^2 E^2 L^2 + 16 eta E L - 1) / (1 - 4 eta^2 E^2 L^2)``."""
    x = eta * E * L
    return 1.0 + x * (20.0 * x * x + 16.0 * x - 1.0) / _denominator(eta, E, L)


@dataclass(frozen=True)
class GapBreakdown:
    term_a: float
    term_b: float
    term_c: float
    term_d: float
    A_t: float

    @property
    def total(self) -> float:
        return math.fsum((self.term_a, self.term_b, self.term_c, self.term_d))


def G_of_t(eta: float, cfg, q, mu2: float, delta: float, rho=None, gain_dl=None,
           p_s: float | None = None, sum_ap: float | None = None) -> GapBreakdown:
    """Per-round gap terms.

    Without ``rho`` the round is treated as noiseless (terms (c) and (d) are
    zero), which is how the ideal baseline is reported.
    """
    E, L, d = cfg.E, cfg.L, cfg.d
    den = _denominator(eta, E, L)
    q = np.asarray(q, dtype=float)
    if np.any(q <= 0):
        raise BoundError("data fractions must be positive")
    term_a = 2.0 * eta * eta * E * E * L * (1.0 + eta * E * L) / den * (mu2 + 4.0 * delta)
    term_b = eta * delta * E * (math.fsum(1.0 / q) + 1.0)
    term_c = term_d = 0.0
    if rho is not None:
        if sum_ap is None or not sum_ap > 0:
            raise BoundError("sum of a_k p_k must be positive")
        if p_s is None or not p_s > 0:
            raise BoundError("downlink amplitude must be positive")
        rho = np.asarray(rho, dtype=float)
        g = np.asarray(gain_dl, dtype=float)
        factor = (1.0 + 2.0 * eta * E + 4.0 * eta * eta * E * E * L * L) / den
        sel = rho != 0
        term_c = d * cfg.sigma_d2 * L * factor / (p_s * p_s) * float(np.sum(rho[sel] ** 2 / g[sel]))
        term_d = 2.0 * d * cfg.sigma_u2 * L / (sum_ap * sum_ap)
    return GapBreakdown(float(term_a), float(term_b), float(term_c), float(term_d), A_of_t(eta, E, L))


def optimality_gap(A, G, delta1: float = 0.0) -> float:
    """``prod A(t) * delta1 + sum_t (prod_{i>t} A(i)) G(t)``, the last round weighted by 1.

    Suffix products are formed once, right to left, and the sum is compensated.
    """
    A = np.asarray(A, dtype=float)
    G = np.asarray(G, dtype=float)
    if A.shape != G.shape or A.ndim != 1:
        raise BoundError("A and G must be equal-length sequences")
    T = A.size
    if T == 0:
        return float(delta1)
    suffix = np.empty(T)
    acc = 1.0
    for t in range(T - 1, -1, -1):
        suffix[t] = acc
        acc *= A[t]
    return math.fsum(np.append(suffix * G, acc * delta1))


# --- descaled broadcast noise audit -----------------------------------------------

@dataclass
class Lemma1Report:
    predicted: float
    second_moment: float
    rel_error: float
    mean: list
    stderr: list
    mean_ok: bool
    moment_ok: bool
    samples: int

    @property
    def passed(self) -> bool:
        return self.mean_ok and self.moment_ok


def lemma1_prediction(d: int, sigma_d2: float, p_s: float, gain_dl, rho) -> float:
    rho = np.asarray(rho, dtype=float)
    return d * sigma_d2 / (p_s * p_s) * float(np.sum(rho * rho / np.asarray(gain_dl, dtype=float)))


def lemma1_audit(d: int, sigma_d2: float, p_s: float, gain_dl, rho, samples: int = 10**6,
                 seed: int = 0, chunk: int = 2**16, rel_tol: float = 0.01) -> Lemma1Report:
    """Monte-Carlo check that ``sum_k rho_k n_k`` is zero-mean with the predicted second moment.

    ``n_k`` has the engine's per-entry variance ``sigma_d^2 / (p_s^2 |h_k|^2)``.
    Each chunk of samples and each device draws from its own keyed stream.
    """
    if samples < 10**5:
        raise BoundError("need at least 1e5 samples")
    gain_dl = np.asarray(gain_dl, dtype=float)
    rho = np.asarray(rho, dtype=float)
    pred = lemma1_prediction(d, sigma_d2, p_s, gain_dl, rho)
    if sigma_d2 == 0:
        zeros = [0.0] * d
        return Lemma1Report(0.0, 0.0, 0.0, zeros, zeros, True, True, samples)
    sd = np.sqrt(sigma_d2 / (p_s * p_s * gain_dl))
    s1 = np.zeros(d)
    s2 = np.zeros(d)
    done = 0
    c = 0
    while done < samples:
        m = min(chunk, samples - done)
        x = np.zeros((m, d))
        for k in range(rho.size):
            if rho[k] != 0:
                x += rho[k] * sd[k] * stream(seed, Purpose.AUDIT, c, k).standard_normal((m, d))
        s1 += x.sum(axis=0)
        s2 += (x * x).sum(axis=0)
        done += m
        c += 1
    mean = s1 / samples
    var = s2 / samples - mean * mean
    se = np.sqrt(var / samples)
    second = float(s2.sum() / samples)
    rel = abs(second - pred) / pred
    return Lemma1Report(
        predicted=pred, second_moment=second, rel_error=rel, mean=mean.tolist(), stderr=se.tolist(),
        mean_ok=bool(np.all(np.abs(mean) <= 3.0 * se)), moment_ok=bool(rel <= rel_tol), samples=samples,
    )


# --- gradient norm against suboptimality -----------------------------------------

@dataclass
class Lemma4Report:
    checked: int
    violations: int
    max_ratio: float  # max ||grad||^2 / (2 L (F - F*)) over models with F > F*
    max_equality_error: float  # max | ||grad||^2 - 2L(F - F*) | in ulps of the larger side

    @property
    def passed(self) -> bool:
        return self.violations == 0


def lemma4_check(objective, gradient, L: float, f_star: float, models) -> Lemma4Report:
    """Check ``||grad F(w)||^2 <= 2 L (F(w) - F*)`` on every sampled model."""
    viol = 0
    max_ratio = 0.0
    max_eq = 0.0
    n = 0
    for w in models:
        g = gradient(w)
        lhs = float(g @ g)
        rhs = 2.0 * L * (objective(w) - f_star)
        scale = max(abs(lhs), abs(rhs))
        if scale > 0:
            max_eq = max(max_eq, abs(lhs - rhs) / np.spacing(scale))
        if lhs > rhs and lhs - rhs > 4 * np.spacing(max(scale, 1e-300)):
            viol += 1
        if rhs > 0:
            max_ratio = max(max_ratio, lhs / rhs)
        n += 1
    return Lemma4Report(checked=n, violations=viol, max_ratio=max_ratio, max_equality_error=float(max_eq))


def minimize_loss(task, X, y, w0=None, tol: float = 1e-12) -> tuple[np.ndarray, float]:
    """Numerical minimiser of the mean loss over ``(X, y)``; the value is an upper estimate of F*."""
    w0 = np.zeros(task.dim) if w0 is None else w0
    res = minimize(lambda w: (task.loss(w, X, y), task.gradient(w, X, y)), w0, jac=True,
                   method="L-BFGS-B", options={"maxiter": 5000, "gtol": tol, "ftol": tol})
    return res.x, float(res.fun)


# --- assumption constants ----------------------------------------------------------

def estimate_mu_delta(task, dataset, partition, models, B: int, batches: int = 4,
                      seed: int = 0) -> tuple[float, float]:
    """Empirical stand-ins for the SGD variance bound and the heterogeneity bound.

    ``mu2``: per model, the mean over batch draws of ``||grad F_k(w; batch) - grad F_k(w)||^2``,
    maximised over devices and models. ``delta``: ``||grad F_k(w) - grad F(w)||^2``
    maximised over devices and models. A batch at least as large as the local
    set is taken to be the local set itself.
    """
    models = list(models)
    if len(models) < 100:
        raise BoundError("need at least 100 model samples")
    q = partition.q
    mu2 = 0.0
    delta = 0.0
    for i, w in enumerate(models):
        full = []
        for k in range(partition.K):
            X, y = dataset.take(partition.assignment[k])
            full.append(task.gradient(w, X, y))
        g = sum(qk * gk for qk, gk in zip(q, full))
        for k in range(partition.K):
            r = full[k] - g
            delta = max(delta, float(r @ r))
            local = partition.assignment[k]
            if B >= local.size:
                continue
            rng = stream(seed, Purpose.AUDIT, i, k)
            acc = 0.0
            for _ in range(batches):
                X, y = dataset.take(local[rng.integers(0, local.size, size=B)])
                r = task.gradient(w, X, y) - full[k]
                acc += float(r @ r)
            mu2 = max(mu2, acc / batches)
    return mu2, delta


# --- reports -----------------------------------------------------------------

def bound_report(records, mu2: float, delta: float, delta1: float | None = None) -> dict:
    """Per-round terms plus the accumulated gap; ``delta1`` is F(w(1)) - F* when known."""
    A = [r.A_t for r in records]
    G = [r.term_a + r.term_b + r.term_c + r.term_d for r in records]
    out = {
        "mu2": mu2,
        "delta": delta,
        "rounds": [
            {"round": r.round, "A_t": r.A_t, "term_a": r.term_a, "term_b": r.term_b,
             "term_c": r.term_c, "term_d": r.term_d}
            for r in records
        ],
        "Lambda": optimality_gap(A, G) if records else 0.0,
        "F1_minus_Fstar": delta1,
        "bound": optimality_gap(A, G, delta1) if delta1 is not None else None,
    }
    return out


def write_bound_report(path, report: dict) -> None:
    with open(path, "w") as fh:
        json.dump(report, fh, indent=1)

