"""Comparison schemes: ideal FedAvg, MSE-threshold selection, truncated channel inversion.

Both wireless baselines select on uplink conditions only, transmit at one
common channel-inverting amplitude and therefore aggregate with equal weights.
They share channels, noise streams and batches with the proposed scheme.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import optimizer
from .channels import draw_round_channels, round_channels
from .config import SystemConfig, learning_rate
from .engine import (
    FederatedSetup, LocalUpdate, PowerDecision, _weighted_sum, aircomp_aggregate,
    downlink_amplitude, local_round,
)
from .rng import SERVER, Purpose, stream


@dataclass(frozen=True)
class BaselineSpec:
    scheme: str
    mse_threshold: float | None = None
    inversion_threshold: float = 0.2

    def __post_init__(self):
        if self.scheme not in ("fedavg-ideal", "mse-threshold", "truncated-inversion"):
            raise ValueError(f"unknown baseline {self.scheme!r}")
        if self.mse_threshold is not None and not self.mse_threshold > 0:
            raise ValueError("mse_threshold must be > 0")
        if not self.inversion_threshold > 0:
            raise ValueError("inversion_threshold must be > 0")


def ideal_fedavg_round(w: np.ndarray, t: int, setup: FederatedSetup) -> np.ndarray:
    """Noiseless broadcast, local SGD everywhere, aggregate with the data fractions ``q_k``."""
    updates = local_round(w, t, setup, None, None)
    return _weighted_sum(setup.q, [u.w_E for u in updates])


# --- MSE threshold ------------------------------------------------------------------

def prefix_amplitudes(gain_up, norm2, cfg: SystemConfig) -> tuple[np.ndarray, np.ndarray]:
    """Device order (best uplink first) and the common amplitude each prefix can sustain.

    Individual budgets: ``alpha_k = sqrt(P_k) |h_k| / ||w_k||`` sorted descending,
    prefix ``m`` limited by its weakest member. Sum budget: devices sorted by
    ``||w_k||^2 / |h_k|^2`` ascending, prefix amplitude ``sqrt(P_tot / sum q_k)``.
    """
    gain_up = np.asarray(gain_up, dtype=float)
    qd = np.asarray(norm2, dtype=float) / gain_up
    if cfg.constraint_mode == "individual":
        alpha = np.sqrt(cfg.p_k_array / qd)
        order = np.argsort(-alpha, kind="stable")
        return order, alpha[order]
    order = np.argsort(qd, kind="stable")
    return order, np.sqrt(cfg.p_tot / np.cumsum(qd[order]))


def prefix_mse(amp: np.ndarray, d: int, sigma_u2: float) -> np.ndarray:
    m = np.arange(1, amp.size + 1)
    return d * sigma_u2 / (m * amp) ** 2


def select_prefix(mse: np.ndarray, tau: float) -> int:
    """Size of the largest prefix whose MSE is within ``tau``; 1 if none is."""
    ok = np.flatnonzero(mse <= tau)
    return int(ok[-1]) + 1 if ok.size else 1


def mse_threshold_select(gain_up, updates: list[LocalUpdate], cfg: SystemConfig, tau: float,
                         p_s: float = 1.0) -> PowerDecision:
    """Greedy prefix selection against an absolute aggregation-MSE threshold ``tau``."""
    if not tau > 0:
        raise ValueError("tau must be > 0")
    norm2 = np.array([u.norm2 for u in updates])
    order, amp = prefix_amplitudes(gain_up, norm2, cfg)
    m = select_prefix(prefix_mse(amp, cfg.d, cfg.sigma_u2), tau)
    a = np.zeros(cfg.K, dtype=int)
    a[order[:m]] = 1
    return PowerDecision(p_s=p_s, p=a * amp[m - 1], a=a)


def calibrate_mse_threshold(cfg: SystemConfig, draws: int = 2000, target: float | None = None,
                            seed: int | None = None) -> float:
    """Relative threshold giving ``target`` (default K/2) selected devices on average.

    Uses equal update norms, so the threshold is relative to the mean per-entry
    update power ``mean ||w_k||^2 / d`` and depends only on channel statistics.
    """
    target = cfg.K / 2 if target is None else target
    rng = stream(cfg.seed if seed is None else seed, Purpose.CALIBRATION)
    curves = []
    for i in range(draws):
        ch = draw_round_channels(rng, cfg.K, i)
        _, amp = prefix_amplitudes(ch.gain_up, np.full(cfg.K, float(cfg.d)), cfg)
        curves.append(prefix_mse(amp, cfg.d, cfg.sigma_u2))
    curves = np.array(curves)
    if not np.any(curves > 0):
        return 1.0

    def mean_count(tau):
        return np.mean([select_prefix(c, tau) for c in curves])

    pos = curves[curves > 0]
    lo, hi = np.log(pos.min()) - 1.0, np.log(pos.max()) + 1.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if mean_count(np.exp(mid)) < target:
            lo = mid
        else:
            hi = mid
    return float(np.exp(hi))


def _relative_tau(setup: FederatedSetup) -> float:
    cfg = setup.cfg
    if cfg.mse_threshold is not None:
        return cfg.mse_threshold
    if "mse_threshold" not in setup.extras:
        setup.extras["mse_threshold"] = calibrate_mse_threshold(cfg)
    return setup.extras["mse_threshold"]


def _decision_objective(gp: optimizer.GapProblem, decision: PowerDecision) -> float:
    return gp.objective(decision.a * decision.p)


def mse_threshold_round(w: np.ndarray, t: int, setup: FederatedSetup):
    cfg = setup.cfg
    eta = learning_rate(cfg, t)
    ch = round_channels(cfg.seed, t, cfg.K)
    p_s = downlink_amplitude(w, cfg)
    updates = local_round(w, t, setup, p_s, ch)
    norm2 = np.array([u.norm2 for u in updates])
    tau = _relative_tau(setup) * float(norm2.mean()) / cfg.d
    decision = mse_threshold_select(ch.gain_up, updates, cfg, tau, p_s)
    w_new = aircomp_aggregate(updates, decision, ch, cfg, stream(cfg.seed, Purpose.NOISE_UP, t, SERVER))
    gp = optimizer.build_problem(ch.gain_dl, ch.gain_up, norm2, cfg, eta, float(w @ w))
    return w_new, decision, ch, _decision_objective(gp, decision)


# --- truncated channel inversion --------------------------------------------------------

def truncated_inversion_select(gain_up, norm2, cfg: SystemConfig, g_th: float,
                               p_s: float = 1.0) -> PowerDecision | None:
    """Devices with ``|h|^2 >= g_th`` invert their channels at one common feasible amplitude."""
    if not g_th > 0:
        raise ValueError("g_th must be > 0")
    gain_up = np.asarray(gain_up, dtype=float)
    sel = gain_up >= g_th
    if not np.any(sel):
        return None
    qd = np.asarray(norm2, dtype=float)[sel] / gain_up[sel]
    if cfg.constraint_mode == "individual":
        amp = float(np.min(np.sqrt(cfg.p_k_array[sel] / qd)))
    else:
        amp = float(np.sqrt(cfg.p_tot / qd.sum()))
    a = sel.astype(int)
    return PowerDecision(p_s=p_s, p=a * amp, a=a)


def truncated_inversion_round(w: np.ndarray, t: int, setup: FederatedSetup):
    """Returns ``(w_new, decision, channels, objective)``; ``decision`` is None for a skipped round."""
    cfg = setup.cfg
    eta = learning_rate(cfg, t)
    ch = round_channels(cfg.seed, t, cfg.K)
    sel = ch.gain_up >= cfg.inversion_threshold
    if not np.any(sel):
        return w.copy(), None, ch, 0.0
    p_s = downlink_amplitude(w, cfg)
    active = sel if cfg.skip_unselected else None
    updates = local_round(w, t, setup, p_s, ch, active)
    norm2 = np.array([u.norm2 if u is not None else 1.0 for u in updates])
    decision = truncated_inversion_select(ch.gain_up, norm2, cfg, cfg.inversion_threshold, p_s)
    dense = [u if u is not None else LocalUpdate(w_E=np.zeros_like(w), norm2=0.0) for u in updates]
    w_new = aircomp_aggregate(dense, decision, ch, cfg, stream(cfg.seed, Purpose.NOISE_UP, t, SERVER))
    gp = optimizer.build_problem(ch.gain_dl, ch.gain_up, np.maximum(norm2, 1e-300), cfg, eta, float(w @ w))
    return w_new, decision, ch, _decision_objective(gp, decision)
