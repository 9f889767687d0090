"""Per-round device selection and uplink power control.

Minimises the communication part of the per-round optimality gap,

    (sum_k theta_k p_k^2 + c) / (sum_k p_k)^2

over uplink amplitudes ``p`` under individual or sum power budgets. The ratio
is homogenised with an auxiliary scalar, lifted to a PSD matrix, solved as an
SDP, and the power vector is read off the rank-one leading block.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .sdp import SdpSolution, SdpStandardForm, certified_lower_bound, solve_sdp

SELECT_REL = 1e-8
RANK_ONE_TOL = 1e-6


class OptimizerError(RuntimeError):
    pass


class RelaxationNotTight(OptimizerError):
    pass


@dataclass(frozen=True)
class GapProblem:
    theta: np.ndarray
    c: float
    q_diag: np.ndarray
    budgets: np.ndarray  # length K (individual) or length 1 (sum)
    mode: str

    @property
    def K(self) -> int:
        return self.theta.size

    def objective(self, p) -> float:
        p = np.asarray(p, dtype=float)
        den = p.sum() ** 2
        if den <= 0:
            return float("inf")
        return float((self.theta @ (p * p) + self.c) / den)

    def constraint_residuals(self, p) -> np.ndarray:
        """``q_k p_k^2 - P_k`` per device, or ``sum q_k p_k^2 - P_tot``."""
        p2 = np.asarray(p, dtype=float) ** 2
        if self.mode == "individual":
            return self.q_diag * p2 - self.budgets
        return np.array([self.q_diag @ p2 - self.budgets[0]])

    def boundary_scale(self, p) -> float:
        """Factor that puts ``p`` on the boundary of the feasible set."""
        p2 = np.asarray(p, dtype=float) ** 2
        if self.mode == "individual":
            used = self.q_diag * p2
            pos = used > 0
            return float(np.sqrt(np.min(self.budgets[pos] / used[pos])))
        return float(np.sqrt(self.budgets[0] / (self.q_diag @ p2)))

    def upper_bounds(self) -> np.ndarray:
        """Per-device amplitude box implied by the budgets."""
        if self.mode == "individual":
            return np.sqrt(self.budgets / self.q_diag)
        return np.sqrt(self.budgets[0] / self.q_diag)

    def to_dict(self) -> dict:
        return {
            "theta": self.theta.tolist(), "c": self.c, "q_diag": self.q_diag.tolist(),
            "budgets": self.budgets.tolist(), "mode": self.mode,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "GapProblem":
        return cls(
            theta=np.asarray(doc["theta"], dtype=float), c=float(doc["c"]),
            q_diag=np.asarray(doc["q_diag"], dtype=float),
            budgets=np.atleast_1d(np.asarray(doc["budgets"], dtype=float)), mode=doc["mode"],
        )


def dump_problem(path, gp: GapProblem) -> None:
    with open(path, "w") as fh:
        json.dump(gp.to_dict(), fh, indent=1)


def load_problem(path) -> GapProblem:
    with open(path) as fh:
        return GapProblem.from_dict(json.load(fh))


def downlink_factor(eta: float, E: int, L: float) -> float:
    """(1 + 2 eta E + 4 eta^2 E^2 L^2) / (1 - 4 eta^2 E^2 L^2)."""
    x = 4.0 * eta ** 2 * E ** 2 * L ** 2
    if 1.0 - x <= 0:
        raise OptimizerError(f"learning rate {eta} too large: 1 - 4 eta^2 E^2 L^2 <= 0")
    return (1.0 + 2.0 * eta * E + x) / (1.0 - x)


def build_problem(gain_dl, gain_up, update_norm2, cfg, eta: float, w_norm2: float) -> GapProblem:
    """Assemble the round's ratio problem from channel gains |h|^2 and ||w_k^E||^2."""
    if w_norm2 <= 0:
        raise OptimizerError("global model norm must be positive")
    gain_dl = np.asarray(gain_dl, dtype=float)
    gain_up = np.asarray(gain_up, dtype=float)
    norm2 = np.asarray(update_norm2, dtype=float)
    p_bar = cfg.p_dl_max / w_norm2
    theta = cfg.d * cfg.sigma_d2 * cfg.L * downlink_factor(eta, cfg.E, cfg.L) / (p_bar * gain_dl)
    c = 2.0 * cfg.d * cfg.sigma_u2 * cfg.L
    q_diag = norm2 / gain_up
    if cfg.constraint_mode == "individual":
        budgets = cfg.p_k_array.copy()
    else:
        budgets = np.array([float(cfg.p_tot)])
    return GapProblem(theta=theta, c=float(c), q_diag=q_diag, budgets=budgets, mode=cfg.constraint_mode)


def homogenize(gp: GapProblem) -> SdpStandardForm:
    K = gp.K
    n = K + 1
    obj = np.zeros((n, n))
    obj[np.arange(K), np.arange(K)] = gp.theta
    obj[K, K] = gp.c
    C = np.zeros((n, n))
    C[:K, :K] = 1.0
    ineq = []
    if gp.mode == "individual":
        for k in range(K):
            Q = np.zeros((n, n))
            Q[k, k] = gp.q_diag[k]
            Q[K, K] = -gp.budgets[k]
            ineq.append((Q, 0.0))
    elif gp.mode == "sum":
        Q = np.zeros((n, n))
        Q[np.arange(K), np.arange(K)] = gp.q_diag
        Q[K, K] = -gp.budgets[0]
        ineq.append((Q, 0.0))
    else:
        raise OptimizerError(f"unknown constraint mode {gp.mode!r}")
    return SdpStandardForm(obj=obj, eq=[(C, 1.0)], ineq=ineq)


def recover_solution(Z: np.ndarray, K: int | None = None, tol: float = RANK_ONE_TOL) -> np.ndarray:
    """Power vector from the leading K x K block of an optimal lifted matrix."""
    Z = np.asarray(Z, dtype=float)
    if K is None:
        K = Z.shape[0] - 1
    zss = Z[K, K]
    ZK = 0.5 * (Z[:K, :K] + Z[:K, :K].T)
    if not zss > 1e-300 * max(1.0, np.abs(ZK).max()):
        raise OptimizerError("auxiliary diagonal entry is not positive")
    evals, evecs = np.linalg.eigh(ZK)
    b = np.sqrt(max(evals[-1], 0.0)) * evecs[:, -1]
    if b.sum() < 0:
        b = -b
    fro = np.linalg.norm(ZK)
    resid = np.linalg.norm(ZK - np.outer(b, b)) / fro if fro > 0 else np.inf
    if not resid <= tol:
        raise RelaxationNotTight(f"leading block is not rank one (residual {resid:.3e})")
    bmax = np.abs(b).max()
    b = np.where((b < 0) & (b > -1e-9 * bmax), 0.0, b)
    if np.any(b < 0):
        raise OptimizerError("recovered powers have mixed signs")
    return b / np.sqrt(zss)


def rank_one_residual(Z: np.ndarray, K: int | None = None) -> float:
    Z = np.asarray(Z, dtype=float)
    K = Z.shape[0] - 1 if K is None else K
    ZK = 0.5 * (Z[:K, :K] + Z[:K, :K].T)
    evals, evecs = np.linalg.eigh(ZK)
    b = np.sqrt(max(evals[-1], 0.0)) * evecs[:, -1]
    return float(np.linalg.norm(ZK - np.outer(b, b)) / np.linalg.norm(ZK))


def select_devices(p) -> np.ndarray:
    """``a_k = 1`` iff ``p_k > 1e-8 * max(p)``."""
    p = np.asarray(p, dtype=float)
    if p.size == 0 or not np.all(np.isfinite(p)) or np.any(p < 0):
        raise OptimizerError("powers must be finite and non-negative")
    top = p.max()
    if top <= 0:
        raise OptimizerError("no device has positive power")
    return (p > SELECT_REL * top).astype(int)


@dataclass
class GapSolution:
    p: np.ndarray
    a: np.ndarray
    objective: float
    sdp_value: float
    sdp_lower_bound: float
    rank_one_residual: float
    shrink: float
    sdp: SdpSolution | None = None


def _sdp_scaling(gp: GapProblem) -> np.ndarray:
    ub = gp.upper_bounds()
    tot = ub.sum()
    return np.concatenate([ub / tot, [1.0 / tot]])


def solve(gp: GapProblem, tol: float = 1e-9) -> GapSolution:
    """Optimal powers, selection and ratio objective for one round."""
    if np.any(gp.budgets <= 0) or np.any(gp.q_diag <= 0):
        raise OptimizerError("budgets and q_diag must be positive")
    K = gp.K
    if not np.any(gp.theta > 0) and gp.c == 0:
        # every feasible point is optimal; use equal amplitudes at the boundary
        p = np.ones(K)
        p *= gp.boundary_scale(p)
        return GapSolution(p=p, a=select_devices(p), objective=0.0, sdp_value=0.0,
                           sdp_lower_bound=0.0, rank_one_residual=0.0, shrink=1.0)
    prob = homogenize(gp)
    D = _sdp_scaling(gp)
    sol = solve_sdp(prob, tol=tol, scale=D)
    p = recover_solution(sol.Z, K)
    # pull onto the boundary: restores exact feasibility and, when c > 0, can only lower the ratio
    shrink = gp.boundary_scale(p)
    if abs(shrink - 1.0) > 1e-4 and gp.c > 0:
        raise OptimizerError(f"recovered point is far from the feasible boundary (scale {shrink:.6g})")
    p = p * shrink
    a = select_devices(p)
    p = p * a
    return GapSolution(
        p=p, a=a, objective=gp.objective(p), sdp_value=sol.objective_value,
        sdp_lower_bound=certified_lower_bound(prob, sol.y, sol.Z, D),
        rank_one_residual=rank_one_residual(sol.Z, K),
        shrink=shrink, sdp=sol,
    )


def brute_force_oracle(gp: GapProblem, resolution: int = 200) -> tuple[np.ndarray, float]:
    """Exhaustive grid over the amplitude box, each grid direction scaled to the boundary."""
    if gp.K > 3:
        raise OptimizerError("grid oracle is limited to K <= 3")
    if np.any(gp.budgets <= 0):
        raise OptimizerError("feasible set has empty interior")
    if resolution < 2:
        raise ValueError("resolution must be >= 2")
    point, lam, obj = kernels.ratio_grid_search(
        np.ascontiguousarray(gp.theta, dtype=float), float(gp.c),
        np.ascontiguousarray(gp.q_diag, dtype=float), np.ascontiguousarray(gp.budgets, dtype=float),
        gp.mode == "sum", np.ascontiguousarray(gp.upper_bounds(), dtype=float), int(resolution),
    )
    return np.asarray(point) * lam, float(obj)
