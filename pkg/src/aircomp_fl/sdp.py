"""Small dense semidefinite programs.

Solves

    minimize   <C, Z>
    subject to <A_i, Z>  = b_i      (equality rows)
               <G_j, Z) <= h_j      (inequality rows)
               Z  PSD

with an infeasible-start primal-dual path-following method using
Nesterov-Todd scaling and Mehrotra predictor-corrector steps. Inequalities are
carried as nonnegative slacks, so the cone is PSD(n) x R_+^m.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla


# absolute floor (in units of ||obj||_F) under the relative duality gap
GAP_FLOOR = 1e-12


class SdpError(RuntimeError):
    pass


class SdpInfeasibleError(SdpError):
    pass


class SdpMaxIterError(SdpError):
    pass


@dataclass
class SdpStandardForm:
    obj: np.ndarray
    eq: list[tuple[np.ndarray, float]]
    ineq: list[tuple[np.ndarray, float]] = field(default_factory=list)

    def __post_init__(self):
        self.obj = np.asarray(self.obj, dtype=float)
        n = self.obj.shape[0]
        if self.obj.shape != (n, n):
            raise ValueError("objective must be square")
        if n > 256:
            raise ValueError("dense solver supports n <= 256")
        self.eq = [(np.asarray(A, dtype=float), float(b)) for A, b in self.eq]
        self.ineq = [(np.asarray(G, dtype=float), float(h)) for G, h in self.ineq]
        for M, _ in [(self.obj, 0.0), *self.eq, *self.ineq]:
            if M.shape != (n, n):
                raise ValueError("all matrices must share the objective's shape")
            if not np.allclose(M, M.T, rtol=0, atol=1e-12 * (1 + np.abs(M).max())):
                raise ValueError("all matrices must be symmetric")

    @property
    def n(self) -> int:
        return self.obj.shape[0]

    def to_dict(self) -> dict:
        return {
            "obj": self.obj.tolist(),
            "eq": [[A.tolist(), b] for A, b in self.eq],
            "ineq": [[G.tolist(), h] for G, h in self.ineq],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "SdpStandardForm":
        return cls(
            obj=np.array(doc["obj"]),
            eq=[(np.array(A), b) for A, b in doc["eq"]],
            ineq=[(np.array(G), h) for G, h in doc.get("ineq", [])],
        )


@dataclass
class SdpSolution:
    Z: np.ndarray
    objective_value: float
    dual_value: float
    y: np.ndarray
    S: np.ndarray
    primal_residual: float
    dual_residual: float
    gap: float
    iterations: int
    history: list[dict] = field(default_factory=list, repr=False)


def _sym(M):
    return 0.5 * (M + M.T)


def _max_step(lam: np.ndarray, dX_hat: np.ndarray, s: np.ndarray, ds: np.ndarray) -> float:
    """Largest step keeping Lambda + a*dX_hat PSD and s + a*ds >= 0 (in the scaled frame)."""
    alpha = math.inf
    if lam.size:
        r = 1.0 / np.sqrt(lam)
        ev = np.linalg.eigvalsh(_sym(dX_hat * r[:, None] * r[None, :]))[0]
        if ev < 0:
            alpha = -1.0 / ev
    if s.size:
        neg = ds < 0
        if np.any(neg):
            alpha = min(alpha, float(np.min(-s[neg] / ds[neg])))
    return alpha


def solve_sdp(prob: SdpStandardForm, tol: float = 1e-8, max_iter: int = 100,
              scale: np.ndarray | None = None, step: float = 0.98) -> SdpSolution:
    """Solve ``prob`` to relative accuracy ``tol``.

    ``scale`` is an optional positive diagonal congruence ``Z = D Z' D`` applied
    before solving; it changes conditioning, not the answer.
    """
    n = prob.n
    me, mi = len(prob.eq), len(prob.ineq)
    m = me + mi
    if me == 0:
        raise ValueError("need at least one equality constraint")

    D = np.ones(n) if scale is None else np.asarray(scale, dtype=float)
    if D.shape != (n,) or np.any(D <= 0):
        raise ValueError("scale must be a positive vector of length n")
    DD = np.outer(D, D)

    # scaled, row-normalised data
    mats = [A * DD for A, _ in prob.eq] + [G * DD for G, _ in prob.ineq]
    rhs = np.array([b for _, b in prob.eq] + [h for _, h in prob.ineq], dtype=float)
    row_norm = np.array([max(np.linalg.norm(M), 1e-300) for M in mats])
    A = np.stack([M / r for M, r in zip(mats, row_norm)])
    b = rhs / row_norm
    C = prob.obj * DD
    c_norm = np.linalg.norm(C)
    c_scale = c_norm if c_norm > 0 else 1.0
    C = C / c_scale
    bnorm = 1.0 + np.linalg.norm(b)
    cnorm = 1.0 + np.linalg.norm(C)

    X = np.eye(n)
    S = np.eye(n)
    s = np.ones(mi)
    lam = np.ones(mi)
    y = np.zeros(m)
    nu = n + mi
    history: list[dict] = []

    for it in range(max_iter + 1):
        AX = np.einsum("kab,ab->k", A, X)
        if mi:
            AX[me:] += s
        rp = b - AX
        Rd = C - np.einsum("k,kab->ab", y, A) - S
        rdl = -y[me:] - lam
        pobj = float(np.sum(C * X))
        dobj = float(b @ y)
        mu = (float(np.sum(X * S)) + float(s @ lam)) / nu
        pinf = np.linalg.norm(rp) / bnorm
        dinf = math.sqrt(np.linalg.norm(Rd) ** 2 + float(rdl @ rdl)) / cnorm
        # relative gap; the floor only matters when the optimum is ~0 in units of ||C||
        scale_pd = abs(pobj) + abs(dobj) + GAP_FLOOR
        gap = abs(pobj - dobj) / scale_pd
        history.append({
            "iter": it, "pobj": pobj * c_scale, "dobj": dobj * c_scale,
            "pinf": float(pinf), "dinf": float(dinf), "gap": float(gap), "mu": float(mu),
        })
        compl = mu * nu / scale_pd
        if pinf <= tol and dinf <= tol and gap <= tol and compl <= tol:
            break
        if it == max_iter:
            raise SdpMaxIterError(
                f"no convergence in {max_iter} iterations (pinf={pinf:.2e}, dinf={dinf:.2e}, gap={gap:.2e})")
        big = 1e10
        if np.linalg.norm(y) > big * cnorm and dobj > big:
            raise SdpInfeasibleError("primal infeasible: dual objective diverges")
        if np.linalg.norm(X) > big * bnorm and pobj < -big:
            raise SdpInfeasibleError("dual infeasible: primal objective unbounded below")

        # Nesterov-Todd scaling point: W = G G^T with G^{-1} X G^{-T} = G^T S G = diag(lam_v)
        try:
            Lx = np.linalg.cholesky(X)
            Ls = np.linalg.cholesky(S)
        except np.linalg.LinAlgError as exc:
            raise SdpError("iterate left the PSD cone") from exc
        U_, sv, Vt = np.linalg.svd(Ls.T @ Lx)
        Gm = Lx @ Vt.T / np.sqrt(sv)
        lv = sv
        W = Gm @ Gm.T
        dls = np.sqrt(s / lam) if mi else s
        vl = np.sqrt(s * lam) if mi else s

        # Schur complement M_ik = <A_i, W A_k W> (+ slack block)
        P = A @ W
        M = np.einsum("iab,kba->ik", P, P)
        if mi:
            M[me:, me:] += np.diag(dls ** 2)
        M = _sym(M)
        try:
            fac = sla.cho_factor(M, check_finite=False)
            solve_m = lambda r: sla.cho_solve(fac, r, check_finite=False)  # noqa: E731
        except np.linalg.LinAlgError:
            solve_m = lambda r: np.linalg.lstsq(M, r, rcond=None)[0]  # noqa: E731

        WRdW = W @ Rd @ W
        Ginv = np.linalg.inv(Gm)

        def direction(Rhat, rl):
            # Rhat, rl: targets for Lambda o (dXh + dSh) and v*(dsh + dlh)
            U = 2.0 * Rhat / (lv[:, None] + lv[None, :])
            RX = Gm @ U @ Gm.T
            ul = rl / vl if mi else rl
            rs = dls * ul if mi else rl
            r = rp - np.einsum("kab,ab->k", A, RX - WRdW)
            if mi:
                r[me:] -= rs - dls ** 2 * rdl
            dy = solve_m(r)
            dS = Rd - np.einsum("k,kab->ab", dy, A)
            dX = _sym(RX - W @ dS @ W)
            dl = rdl - dy[me:]
            ds = rs - dls ** 2 * dl if mi else rl
            return dX, dy, dS, ds, dl

        def scaled(dX, dS, ds, dl):
            dXh = _sym(Ginv @ dX @ Ginv.T)
            dSh = _sym(Gm.T @ dS @ Gm)
            dsh = ds / dls if mi else ds
            dlh = dl * dls if mi else dl
            return dXh, dSh, dsh, dlh

        # predictor
        Rhat = -np.diag(lv ** 2)
        rl = -(vl ** 2)
        dX, dy, dS, ds, dl = direction(Rhat, rl)
        dXh, dSh, dsh, dlh = scaled(dX, dS, ds, dl)
        ap = min(1.0, _max_step(lv, dXh, s, ds))
        ad = min(1.0, _max_step(lv, dSh, lam, dl))
        mu_aff = (float(np.sum((X + ap * dX) * (S + ad * dS)))
                  + float((s + ap * ds) @ (lam + ad * dl))) / nu
        sigma = min(1.0, max(0.0, mu_aff / mu)) ** 3

        # corrector
        corr = _sym(dXh @ dSh)
        Rhat = sigma * mu * np.eye(n) - np.diag(lv ** 2) - corr
        rl = sigma * mu - vl ** 2 - dsh * dlh
        dX, dy, dS, ds, dl = direction(Rhat, rl)
        dXh, dSh, _, _ = scaled(dX, dS, ds, dl)
        ap = min(1.0, step * _max_step(lv, dXh, s, ds))
        ad = min(1.0, step * _max_step(lv, dSh, lam, dl))

        X = _sym(X + ap * dX)
        s = s + ap * ds
        y = y + ad * dy
        S = _sym(S + ad * dS)
        lam = lam + ad * dl

    # undo normalisation and congruence scaling
    Z = X * DD
    y_out = y / row_norm * c_scale
    S_out = S * c_scale / DD
    return SdpSolution(
        Z=Z,
        objective_value=float(np.sum(prob.obj * Z)),
        dual_value=float(rhs @ y_out),
        y=y_out,
        S=S_out,
        primal_residual=float(pinf),
        dual_residual=float(dinf),
        gap=float(gap),
        iterations=it,
        history=history,
    )


def certified_lower_bound(prob: SdpStandardForm, y, Z, scale: np.ndarray | None = None) -> float:
    """Lower bound on the optimum from any multiplier vector ``y``.

    Inequality multipliers are clipped to their sign and the leftover dual
    infeasibility ``min(0, lambda_min(D S D))`` is charged against
    ``tr(D^-1 Z D^-1)``, with ``Z`` the (near) optimal primal point and ``D``
    the diagonal congruence the solve used.
    """
    y = np.asarray(y, dtype=float).copy()
    me = len(prob.eq)
    y[me:] = np.minimum(y[me:], 0.0)
    S = prob.obj - sum(yi * A for yi, (A, _) in zip(y[:me], prob.eq))
    S = S - sum(yi * G for yi, (G, _) in zip(y[me:], prob.ineq))
    rhs = np.array([b for _, b in prob.eq] + [h for _, h in prob.ineq])
    D = np.ones(prob.n) if scale is None else np.asarray(scale, dtype=float)
    lmin = float(np.linalg.eigvalsh(_sym(S * np.outer(D, D)))[0])
    trace = float(np.sum(np.diag(np.asarray(Z, dtype=float)) / D ** 2))
    return float(math.fsum(rhs * y) + min(lmin, 0.0) * trace)


def check_solution(prob: SdpStandardForm, sol: SdpSolution) -> dict:
    """Recompute every contract residual from ``Z`` (and ``y`` for the gap).

    Residuals are relative: PSD-ness against ``||Z||_2``, each constraint
    against ``||M||_F * ||Z||_F`` plus its right-hand side, the gap against
    ``|primal| + |dual|``.
    """
    Z = _sym(np.asarray(sol.Z, dtype=float))
    evz = np.linalg.eigvalsh(Z)
    znorm2 = max(abs(evz[-1]), 1e-300)
    zf = np.linalg.norm(Z)
    eq_res = max(
        abs(float(np.sum(A * Z)) - b) / (np.linalg.norm(A) * zf + abs(b))
        for A, b in prob.eq
    )
    ineq_res = max(
        [max(float(np.sum(G * Z)) - h, 0.0) / (np.linalg.norm(G) * zf + abs(h)) for G, h in prob.ineq],
        default=0.0,
    )
    y = np.asarray(sol.y, dtype=float)
    me = len(prob.eq)
    S = prob.obj - sum(yi * A for yi, (A, _) in zip(y[:me], prob.eq))
    S = S - sum(yi * G for yi, (G, _) in zip(y[me:], prob.ineq))
    evs = np.linalg.eigvalsh(_sym(S))
    s_norm = max(abs(evs).max(), np.linalg.norm(prob.obj), 1e-300)
    rhs = np.array([b for _, b in prob.eq] + [h for _, h in prob.ineq])
    pval = float(np.sum(prob.obj * Z))
    dval = float(rhs @ y)
    return {
        "psd": float(max(-evz[0], 0.0) / znorm2),
        "eq": float(eq_res),
        "ineq": float(ineq_res),
        "dual_psd": float(max(-evs[0], 0.0) / s_norm),
        "dual_sign": float(max(y[me:].max(), 0.0) if len(y) > me else 0.0),
        "gap": float(abs(pval - dval) / max(abs(pval) + abs(dval), 1e-300)),
    }


def dump_debug(path, prob: SdpStandardForm, sol: SdpSolution) -> None:
    doc = {
        "problem": prob.to_dict(),
        "Z": sol.Z.tolist(),
        "y": sol.y.tolist(),
        "objective_value": sol.objective_value,
        "dual_value": sol.dual_value,
        "residuals": check_solution(prob, sol),
        "iterations": sol.iterations,
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)
