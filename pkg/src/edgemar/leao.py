"""LEAO: exact penalty + SCA + product replacement inside block coordinate descent.

Nesting, innermost first:

* ``sca_solve``: with auxiliaries fixed, repeatedly minimise a convex
  majoriser built at the current point (linearised binarity penalty, DC
  bounds for the ``a * (.)`` products) with the barrier solver.
* ``product_replacement_solve``: alternate ``sca_solve`` with closed-form
  auxiliary updates.
* ``leao_solve``: alternate the exact frequency step with the
  ``(s, A, r)`` block, escalating the penalty weight until the relaxed
  assignment is (numerically) binary, then round, repair and polish with the
  assignment held fixed.

Every stage is a majorise-minimise step for a fixed penalty weight, so the
penalised objective never increases while the weight is constant.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .models import (
    DecisionVars, constraint_residuals, objective, optimal_u, optimal_v,
    optimal_w, server_power_matrix, shared_z,
)
from .scenario import Scenario
from .solver_core import (
    ConvexSolveError, InfeasibleScenarioError, SolverSettings, allocate_resources,
    initial_feasible_point, is_feasible, min_resource, one_hot, optimal_f_step,
    shrink_to_fit, solve_convex,
)

log = logging.getLogger(__name__)

FREE_ALL = ("s", "A", "r")
LAT_SLACK = 1e-7      # seconds kept free in the latency budget at start points
MIX = 1e-4            # mass spread over non-selected servers at a relaxed start


# ---------------------------------------------------------------------------
# penalty

@dataclass
class PenaltyState:
    mu: float
    gap: float = 0.0
    rho: float = 5.0
    eps_bin: float = 1e-3
    history: list = field(default_factory=list)

    def escalate(self) -> None:
        self.mu *= self.rho


def binarity_gap(A_hat) -> float:
    A = np.asarray(A_hat, dtype=float)
    return float(np.max(A * (1.0 - A)))


def _check_unit(A, name="A_hat"):
    A = np.asarray(A, dtype=float)
    if np.any(A < -1e-9) or np.any(A > 1 + 1e-9):
        raise ValueError(f"{name} entries must lie in [0, 1]")
    return A


def penalty_term(A_hat, mu) -> float:
    A = _check_unit(A_hat)
    return float(-mu * np.sum(A * (A - 1.0)))


def sca_surrogate_penalty(A_hat, A_hat_t, mu) -> float:
    """``-mu * sum`` of the tangent of ``a (a - 1)`` at ``A_hat_t``; majorises ``penalty_term``."""
    A = _check_unit(A_hat)
    At = _check_unit(A_hat_t, "A_hat_t")
    if A.shape != At.shape:
        raise ValueError(f"shape mismatch {A.shape} vs {At.shape}")
    lin = At * (At - 1.0) + (2.0 * At - 1.0) * (A - At)
    return float(-mu * np.sum(lin))


# ---------------------------------------------------------------------------
# auxiliaries

def update_auxiliaries(vars: DecisionVars, scn: Scenario):
    """Closed-form ``(w, z, v)`` at the current point."""
    cv = scn.curves
    w = optimal_w(vars.s, vars.r, cv)
    z = shared_z(vars.A_hat, vars.r)
    c = server_power_matrix(vars.r, scn)
    Lp = cv.complexity(vars.s) / vars.r
    v = optimal_v(vars.A_hat, c * Lp[:, None])
    return w, z, v


def with_auxiliaries(vars: DecisionVars, scn: Scenario) -> DecisionVars:
    w, z, v = update_auxiliaries(vars, scn)
    return vars.with_(w=w, z=z, v=v, u=optimal_u(vars.s, vars.r, scn.curves))


# ---------------------------------------------------------------------------
# structured block subproblem

class BlockSubproblem:
    """Convex majoriser of the penalised objective over ``(s, A, r)``.

    Per-device variables are stored as rows ``[s / s_min, r, a_1 .. a_N]``.
    ``f``, ``w`` and ``u`` are frozen at ``anchor``; the ``a * (.)`` products in
    the server energy and the capacity constraints use DC bounds around the
    anchor (exact products when ``A`` is frozen). Local constraints (latency
    budget, boxes, row sums) give block-diagonal Newton systems; the N capacity
    constraints add a rank-N term handled by Woodbury.
    """

    def __init__(self, scn: Scenario, anchor: DecisionVars, mu: float = 0.0,
                 free=FREE_ALL):
        cv = scn.curves
        self.scn = scn
        self.anchor = anchor
        K, N = scn.K, scn.N
        self.K, self.N, self.m = K, N, N + 2
        self.free_s, self.free_A, self.free_r = "s" in free, "A" in free, "r" in free
        mask = np.zeros(self.m, dtype=bool)
        mask[0], mask[1], mask[2:] = self.free_s, self.free_r, self.free_A
        self.mask = mask
        self.S0 = scn.s_min
        self.sig_lo = scn.s_lower / self.S0
        self.sig_hi = scn.s_max / self.S0
        self.mu = float(mu)

        f = anchor.f
        self.w, self.u = anchor.w, anchor.u
        bits = cv.sigma / (scn.R * 1e6)
        self.bits = bits * self.S0                     # L_t per unit of scaled s
        self.beta = (cv.power_bs(f) + scn.lambda1) / K
        self.cs = (cv.power_tr(scn.R) + cv.power_bs(f) + scn.lambda1) * self.bits / K
        self.lam2 = scn.lambda2 / K
        self.const = float(np.sum(cv.t_pre * cv.power_pre(f)) / K)
        self.alpha = cv.p_server[0] * (scn.F / scn.S) ** 2
        self.b = cv.p_server[1]

        A_e = np.asarray(anchor.A_hat, dtype=float)
        if self.free_A:
            self.pen_lin = mu * (1.0 - 2.0 * A_e)
            self.const += mu * float(np.sum(A_e * A_e))
        else:
            self.const += mu * float(np.sum(A_e * (1.0 - A_e)))

        self.X_e = self.pack(anchor)
        if self.free_A:
            d = self._curves(self.X_e)
            y_e, ys_e, yr_e = d["y"], d["ys"], d["yr"]
            self.y_e, self.ys_e, self.yr_e = y_e, ys_e, yr_e
            self.gam = np.sqrt(np.maximum(y_e, 1e-12))
            self.h = self.gam * A_e - y_e / self.gam
            r_e = anchor.r[:, None]
            self.gc = np.broadcast_to(np.sqrt(r_e), (K, N)).copy()
            self.hc = self.gc * A_e - r_e / self.gc
        self.n_ineq = K + N + (2 * K if self.free_s else 0) + (K * N if self.free_A else 0)

    # -- packing
    def pack(self, vars: DecisionVars) -> np.ndarray:
        X = np.empty((vars.K, self.m))
        X[:, 0] = vars.s / self.S0
        X[:, 1] = vars.r
        X[:, 2:] = vars.A_hat
        return X

    def unpack(self, X) -> DecisionVars:
        a = self.anchor
        return DecisionVars(f=a.f.copy(), s=X[:, 0] * self.S0, A_hat=X[:, 2:].copy(),
                            r=X[:, 1].copy(), w=a.w, z=a.z, v=a.v, u=a.u)

    # -- model pieces
    def _curves(self, X):
        cv = self.scn.curves
        S0 = self.S0
        s = X[:, 0] * S0
        r = X[:, 1]
        w, u = self.w, self.u
        C = cv.complexity(s)
        Cs = S0 * cv.complexity_d1(s)
        Css = S0 * S0 * cv.complexity_d2(s)
        curv = Cs * Cs + C * Css
        Lp = C * C * w + 1.0 / (4.0 * w * r * r)
        Lps, Lpr = 2 * C * Cs * w, -1.0 / (2.0 * w * r ** 3)
        Lpss, Lprr = 2 * w * curv, 3.0 / (2.0 * w * r ** 4)
        Y1 = C * C * u + r * r / (4.0 * u)
        Y1s, Y1r = 2 * C * Cs * u, r / (2.0 * u)
        Y1ss, Y1rr = 2 * u * curv, 1.0 / (2.0 * u)
        al, b = self.alpha, self.b
        return dict(
            s=s, Lp=Lp, Lps=Lps, Lpr=Lpr, Lpss=Lpss, Lprr=Lprr,
            y=np.outer(Y1, al) + b * Lp[:, None],
            ys=np.outer(Y1s, al) + b * Lps[:, None],
            yr=np.outer(Y1r, al) + b * Lpr[:, None],
            yss=np.outer(Y1ss, al) + b * Lpss[:, None],
            yrr=np.outer(Y1rr, al) + b * Lprr[:, None],
        )

    def _domain_ok(self, X) -> bool:
        if np.any(X[:, 1] <= 0) or np.any(X[:, 0] <= 0):
            return False
        if self.free_s and (np.any(X[:, 0] <= self.sig_lo) or np.any(X[:, 0] >= self.sig_hi)):
            return False
        if self.free_A and np.any(X[:, 2:] <= 0):
            return False
        return True

    def _eval(self, X, order: int):
        """Objective, latency and capacity constraints with derivatives up to ``order``."""
        scn = self.scn
        cv = scn.curves
        K, N, m = self.K, self.N, self.m
        d = self._curves(X)
        sig, r, A = X[:, 0], X[:, 1], X[:, 2:]
        s = d["s"]
        l = scn.l
        acc = cv.accuracy(s)
        Lcn = (A * l).sum(axis=1)
        dev = self.cs * sig + self.beta * (Lcn + d["Lp"]) - self.lam2 * acc
        y = d["y"]
        if self.free_A:
            gam, h = self.gam, self.h
            P = gam * A + y / gam
            dsig = sig - self.X_e[:, 0]
            dr = r - self.X_e[:, 1]
            y_lin = self.y_e + self.ys_e * dsig[:, None] + self.yr_e * dr[:, None]
            hpos = h >= 0
            qh = np.where(hpos, y, y_lin) / gam
            B = 0.25 * P * P - 0.25 * h * h - 0.5 * h * (gam * A - h) + 0.5 * h * qh
            val = float(dev.sum() + (self.pen_lin * A).sum() + B.sum() / N + self.const)
        else:
            val = float(dev.sum() + (A * y).sum() / N + self.const)

        c2 = self.bits * sig + Lcn + d["Lp"] - scn.L_max
        if self.free_A:
            gc, hc = self.gc, self.hc
            P7 = gc * A + r[:, None] / gc
            g7 = 0.25 * P7 * P7 - 0.25 * hc * hc - 0.5 * hc * (gc * A - hc) + 0.5 * hc * r[:, None] / gc
        else:
            g7 = A * r[:, None]
        c7 = g7.sum(axis=0) - scn.S
        if order == 0:
            return val, c2, c7

        # gradients and Hessians, per device
        g = np.zeros((K, m))
        H = np.zeros((K, m, m))
        A1 = cv.accuracy_d1(s) * self.S0
        A2 = cv.accuracy_d2(s) * self.S0 ** 2
        g[:, 0] = self.cs + self.beta * d["Lps"] - self.lam2 * A1
        g[:, 1] = self.beta * d["Lpr"]
        H[:, 0, 0] = self.beta * d["Lpss"] - self.lam2 * A2
        H[:, 1, 1] = self.beta * d["Lprr"]
        ys, yr, yss, yrr = d["ys"], d["yr"], d["yss"], d["yrr"]
        ia = np.arange(2, m)
        if self.free_A:
            g[:, 2:] = self.beta[:, None] * l + self.pen_lin + 0.5 * gam * (P - h) / N
            ys_q = np.where(hpos, ys, self.ys_e)
            yr_q = np.where(hpos, yr, self.yr_e)
            g[:, 0] += (0.5 * (P * ys + h * ys_q) / gam).sum(1) / N
            g[:, 1] += (0.5 * (P * yr + h * yr_q) / gam).sum(1) / N
            wgt = 0.5 * (P + np.where(hpos, h, 0.0)) / gam
            H[:, 0, 0] += (0.5 * ys * ys / gam ** 2 + wgt * yss).sum(1) / N
            H[:, 1, 1] += (0.5 * yr * yr / gam ** 2 + wgt * yrr).sum(1) / N
            H[:, 0, 1] += (0.5 * ys * yr / gam ** 2).sum(1) / N
            H[:, ia, ia] += 0.5 * gam ** 2 / N
            H[:, 0, 2:] += 0.5 * ys / N
            H[:, 1, 2:] += 0.5 * yr / N
        else:
            g[:, 0] += (A * ys).sum(1) / N
            g[:, 1] += (A * yr).sum(1) / N
            H[:, 0, 0] += (A * yss).sum(1) / N
            H[:, 1, 1] += (A * yrr).sum(1) / N
            g[:, 2:] = self.beta[:, None] * l + y / N
            H[:, 0, 2:] += ys / N
            H[:, 1, 2:] += yr / N
        H[:, 1, 0] = H[:, 0, 1]
        H[:, 2:, 0] = H[:, 0, 2:]
        H[:, 2:, 1] = H[:, 1, 2:]

        dc2 = np.zeros((K, m))
        dc2[:, 0] = self.bits + d["Lps"]
        dc2[:, 1] = d["Lpr"]
        dc2[:, 2:] = l
        hc2 = np.zeros((K, m, m))
        hc2[:, 0, 0] = d["Lpss"]
        hc2[:, 1, 1] = d["Lprr"]

        dG = np.zeros((K, m, N))
        if self.free_A:
            dG[:, 1, :] = 0.5 * (P7 + hc) / gc
            dG[:, ia, np.arange(N)] = 0.5 * gc * (P7 - hc)
            hG = (0.5 * gc * gc, np.full((K, N), 0.5), 0.5 / (gc * gc))
        else:
            dG[:, 1, :] = A
            hG = None
        return val, c2, c7, g, H, dc2, hc2, dG, hG

    # -- interior-point protocol
    def objective(self, X) -> float:
        return self._eval(X, 0)[0]

    def strictly_feasible(self, X) -> bool:
        if not self._domain_ok(X):
            return False
        _, c2, c7 = self._eval(X, 0)
        return bool(np.all(c2 < 0) and np.all(c7 < 0))

    def constraint_values(self, X) -> np.ndarray:
        """Flat ``[latency (K), capacity (N), s lower (K), s upper (K), -a (K N)]``."""
        _, c2, c7 = self._eval(X, 0)
        parts = [c2, c7]
        if self.free_s:
            parts += [self.sig_lo - X[:, 0], X[:, 0] - self.sig_hi]
        if self.free_A:
            parts.append(-X[:, 2:].ravel())
        return np.concatenate(parts)

    def _split(self, v):
        K, N = self.K, self.N
        out = {"c2": v[:K], "c7": v[K:K + N]}
        i = K + N
        if self.free_s:
            out["lo"], out["hi"] = v[i:i + K], v[i + K:i + 2 * K]
            i += 2 * K
        if self.free_A:
            out["a"] = v[i:i + K * N].reshape(K, N)
        return out

    def _grad_sum(self, X, w, dc2, dG):
        """Sum of constraint gradients weighted by the flat vector ``w``."""
        parts = self._split(w)
        G = dc2 * parts["c2"][:, None] + dG @ parts["c7"]
        if self.free_s:
            G[:, 0] += parts["hi"] - parts["lo"]
        if self.free_A:
            G[:, 2:] -= parts["a"]
        return G

    def dual_residual(self, X, lam, nu) -> np.ndarray:
        _, _, _, g, _, dc2, _, dG, _ = self._eval(X, 1)
        R = g + self._grad_sum(X, lam, dc2, dG)
        if self.free_A and nu is not None and np.size(nu):
            R[:, 2:] += np.asarray(nu)[:, None]
        return R[:, self.mask].ravel()

    def pd_step(self, X, lam, sl, rp):
        """Newton direction with the latency and capacity multipliers kept explicit.

        Near-active constraints carry ``lambda / s`` weights many decades above
        the objective curvature; condensing them into the Hessian loses most of
        the working precision. Box terms are diagonal and stay condensed. Each
        device gets a local KKT block in ``(dx, latency multiplier, row-sum
        multiplier)``; the N capacity multipliers come from a small positive
        definite Schur complement.
        """
        _, c2, c7, g, H, dc2, hc2, dG, hG = self._eval(X, 2)
        K, m, N = self.K, self.m, self.N
        L = self._split(lam)
        S = self._split(sl)
        R = self._split(rp)
        d = self._split(lam / sl)
        Hb = H + hc2 * L["c2"][:, None, None]
        bx0 = -g.copy()
        bx1 = np.zeros((K, m))
        if self.free_A:
            ia = np.arange(2, m)
            haa, har, hrr = hG
            l7 = L["c7"]
            Hb[:, ia, ia] += haa * l7 + d["a"]
            Hb[:, 1, 2:] += har * l7
            Hb[:, 2:, 1] += har * l7
            Hb[:, 1, 1] += (hrr * l7).sum(1)
            # condensed bounds -a <= 0
            bx0[:, 2:] += L["a"] * R["a"] / S["a"]
            bx1[:, 2:] += 1.0 / S["a"]
        if self.free_s:
            Hb[:, 0, 0] += d["lo"] + d["hi"]
            bx0[:, 0] += (L["lo"] * R["lo"] / S["lo"] - L["hi"] * R["hi"] / S["hi"])
            bx1[:, 0] += 1.0 / S["lo"] - 1.0 / S["hi"]
        fz = ~self.mask
        G = dG.copy()
        a2 = dc2.copy()
        bx0[:, fz] = 0.0
        bx1[:, fz] = 0.0
        G[:, fz, :] = 0.0
        a2[:, fz] = 0.0
        Hb[:, fz, :] = 0.0
        Hb[:, :, fz] = 0.0
        Hb[:, fz, fz] = 1.0
        # local block: [dx (m), latency multiplier, row-sum multiplier]
        nl = m + 1 + (1 if self.free_A else 0)
        M = np.zeros((K, nl, nl))
        M[:, :m, :m] = Hb
        M[:, :m, m] = a2
        M[:, m, :m] = a2
        M[:, m, m] = -S["c2"] / L["c2"]
        if self.free_A:
            M[:, 2:m, m + 1] = 1.0
            M[:, m + 1, 2:m] = 1.0
        rhs = np.zeros((K, nl, N + 2))
        rhs[:, :m, 0] = bx0
        rhs[:, :m, 1] = bx1
        rhs[:, m, 0] = -R["c2"]
        rhs[:, m, 1] = -1.0 / L["c2"]
        rhs[:, :m, 2:] = G
        D = np.ones((K, nl))
        D[:, :m] = 1.0 / np.sqrt(np.maximum(np.diagonal(Hb, axis1=1, axis2=2), 1e-300))
        D[:, m] = 1.0 / np.maximum(np.linalg.norm(a2 * D[:, :m], axis=1), 1e-300)
        Ms = M * D[:, :, None] * D[:, None, :]
        Z = np.linalg.solve(Ms, rhs * D[:, :, None]) * D[:, :, None]
        Zb, ZG = Z[:, :, :2], Z[:, :, 2:]
        # capacity multipliers: (sum G' L^-1 G + S7 / L7) lam7 = sum G' L^-1 b - r7
        schur = np.einsum("kmi,kmj->ij", G, ZG[:, :m, :]) + np.diag(S["c7"] / L["c7"])
        r7 = np.stack([-R["c7"], -1.0 / L["c7"]], axis=1)
        lam7 = np.linalg.solve(schur, np.einsum("kmi,kmc->ic", G, Zb[:, :m, :]) - r7)
        Y = Zb - np.einsum("kln,nc->klc", ZG, lam7)
        dx = Y[:, :m, :]
        if self.free_A:
            nu = Y[:, m + 1, :]
        else:
            nu = np.zeros((0, 2))
        jd = [np.concatenate(self._lin_parts(dx[:, :, j], dc2, dG)) for j in range(2)]
        return dx[:, :, 0], dx[:, :, 1], nu[:, 0], nu[:, 1], jd[0], jd[1]

    def _lin_parts(self, dx, dc2, dG):
        parts = [(dc2 * dx).sum(1), np.einsum("kmn,km->n", dG, dx)]
        if self.free_s:
            parts += [-dx[:, 0], dx[:, 0]]
        if self.free_A:
            parts.append(-dx[:, 2:].ravel())
        return parts

    def max_step(self, X, dx) -> float:
        step = np.inf
        r, dr = X[:, 1], dx[:, 1]
        neg = dr < 0
        if np.any(neg):
            step = min(step, np.min(r[neg] / -dr[neg]))
        if self.free_A:
            a, da = X[:, 2:], dx[:, 2:]
            neg = da < 0
            if np.any(neg):
                step = min(step, np.min(a[neg] / -da[neg]))
        if self.free_s:
            sg, ds = X[:, 0], dx[:, 0]
            neg, pos = ds < 0, ds > 0
            if np.any(neg):
                step = min(step, np.min((sg[neg] - self.sig_lo) / -ds[neg]))
            if np.any(pos):
                step = min(step, np.min((self.sig_hi - sg[pos]) / ds[pos]))
        return float(step)


def penalised_merit(vars: DecisionVars, scn: Scenario, mu: float, free=FREE_ALL) -> float:
    """Majoriser value at its own anchor: objective with the current ``w``, ``u`` plus exact penalty."""
    prob = BlockSubproblem(scn, vars, mu, free)
    return prob.objective(prob.X_e)


def true_merit(vars: DecisionVars, scn: Scenario, mu: float) -> float:
    return objective(vars, scn).Q + mu * float(np.sum(vars.A_hat * (1.0 - vars.A_hat)))


# ---------------------------------------------------------------------------
# strictly feasible starts

def interiorize(vars: DecisionVars, scn: Scenario, mix: float = MIX,
                settings: SolverSettings | None = None) -> DecisionVars:
    """Nearby point strictly inside every inequality (relaxed rows if ``mix > 0``).

    Servers with no slack are re-allocated: minimum need at a tightened
    latency budget plus an equal share of what is left, after pulling
    resolutions toward the floor if even the needs do not fit.
    """
    st = settings or SolverSettings()
    K, N = scn.K, scn.N
    idx = np.argmax(vars.A_hat, axis=1)
    lo, hi = scn.s_lower, scn.s_max
    pad = st.margin * (hi - lo)
    s = np.clip(vars.s, lo + pad, hi - pad)
    r = vars.r.copy()
    onehot = one_hot(idx, N)
    A = (1.0 - mix) * onehot + mix / N if mix > 0 else onehot
    cap = scn.S * (1.0 - st.capacity_margin)

    def slack_check(s, r):
        L = scn.curves.sigma * s / (scn.R * 1e6) + (A * scn.l).sum(1) + scn.curves.complexity(s) / r
        load = (A * r[:, None]).sum(0)
        return L < scn.L_max - 0.5 * LAT_SLACK, load < cap

    ok_dev, ok_srv = slack_check(s, r)
    bad = set(np.flatnonzero(~ok_srv)) | set(idx[~ok_dev])
    if bad:
        leak = mix * r.sum()
        # mixed rows also pay a little of the other servers' network latency
        slack = LAT_SLACK + (A * scn.l).sum(1) - scn.l[np.arange(K), idx]
        for n in sorted(bad):
            members = np.flatnonzero(idx == n)
            sub_margin = 2 * st.capacity_margin + leak / scn.S[n]
            s_new, failed = shrink_to_fit(scn, idx, s, sub_margin, slack=slack)
            if n in failed:
                raise InfeasibleScenarioError(f"server {n} cannot host its devices")
            s[members] = s_new[members]
            need = min_resource(scn, s, idx, slack)[members]
            left = scn.S[n] * (1 - sub_margin) - need.sum()
            r[members] = need + left / members.size
        ok_dev, ok_srv = slack_check(s, r)
        if not (ok_dev.all() and ok_srv.all()):
            raise InfeasibleScenarioError("could not build a strictly feasible start")
    return with_auxiliaries(vars.with_(s=s, r=r, A_hat=A), scn)


# ---------------------------------------------------------------------------
# loops

def _rel_change(old: DecisionVars, new: DecisionVars) -> float:
    out = 0.0
    for a, b in ((old.s, new.s), (old.r, new.r), (old.A_hat, new.A_hat)):
        out = max(out, np.max(np.abs(b - a)) / max(np.max(np.abs(a)), 1e-12))
    return float(out)


def sca_solve(scn: Scenario, vars0: DecisionVars, mu: float,
              settings: SolverSettings | None = None, free=FREE_ALL, warm: dict | None = None):
    """Successive convex approximation over the free block, auxiliaries fixed.

    Returns ``(vars, iterations, surrogate_history)``.
    """
    st = settings or SolverSettings()
    vars = vars0
    hist = [penalised_merit(vars, scn, mu, free)]
    it = 0
    warm = {} if warm is None else warm
    for it in range(1, st.zeta_max + 1):
        prob = BlockSubproblem(scn, vars, mu, free)
        # Multipliers of the previous solve are a good dual start for the
        # next majoriser; the inner gap only needs to be small relative to the
        # decrease SCA is making.
        floor = st.gap_tol * (1.0 + abs(hist[-1]))
        gap = max(floor, st.sca_gap * warm["dec"]) if "dec" in warm else None
        res = solve_convex(prob, prob.X_e, st, gap=gap, lam0=warm.get("lam"))
        warm["lam"] = res.lam
        warm["dec"] = max(res.start_value - res.value, 0.0)
        new = prob.unpack(res.x)
        change = _rel_change(vars, new)
        vars = new
        hist.append(penalised_merit(vars, scn, mu, free))
        if change <= st.tau:
            break
    return vars, it, hist


def product_replacement_solve(scn: Scenario, vars0: DecisionVars, mu: float,
                              settings: SolverSettings | None = None, free=FREE_ALL,
                              warm: dict | None = None):
    """Alternate ``sca_solve`` with closed-form auxiliary updates.

    Returns ``(vars, pr_iterations, sca_iterations, history)``; the history
    holds the surrogate value after each auxiliary update (tight, so equal to
    the true penalised objective).
    """
    st = settings or SolverSettings()
    warm = {} if warm is None else warm
    vars = with_auxiliaries(vars0, scn)
    prev = penalised_merit(vars, scn, mu, free)
    hist = [prev]
    n_sca = 0
    it = 0
    for it in range(1, st.eta_max + 1):
        vars, k, _ = sca_solve(scn, vars, mu, st, free, warm)
        n_sca += k
        vars = with_auxiliaries(vars, scn)
        cur = penalised_merit(vars, scn, mu, free)
        hist.append(cur)
        if abs(cur - prev) <= st.tau * abs(prev):
            break
        prev = cur
    return vars, it, n_sca, hist


# ---------------------------------------------------------------------------
# rounding

def round_and_repair(vars: DecisionVars, scn: Scenario,
                     settings: SolverSettings | None = None) -> DecisionVars:
    """Binary assignment from the row-wise argmax, repaired to full feasibility.

    Kept as is where the rounded point already satisfies every constraint.
    Otherwise servers that are over capacity or host a device over its
    latency budget get the minimum-need-plus-equal-share allocation; if the
    needs alone exceed capacity, resolutions are pulled toward the floor, and
    as a last resort the device with the largest weight on another server is
    moved there (at most K moves).
    """
    st = settings or SolverSettings()
    K, N = scn.K, scn.N
    A_rel = np.asarray(vars.A_hat, dtype=float)
    idx = np.argmax(A_rel, axis=1)
    s = np.clip(vars.s, scn.s_lower, scn.s_max)
    r = vars.r.copy()
    out = vars.with_(A_hat=one_hot(idx, N), s=s, r=r)
    if is_feasible(out, scn, nl_tol=0.0):
        return with_auxiliaries(out, scn)

    pref = np.argsort(-A_rel, axis=1, kind="stable")
    margin = st.capacity_margin
    for _ in range(K + 1):
        s_fit, failed = shrink_to_fit(scn, idx, s, margin, slack=LAT_SLACK)
        if not failed:
            break
        n = failed[0]
        members = np.flatnonzero(idx == n)
        moved = False
        for k in members[np.argsort(-np.sort(A_rel[members], axis=1)[:, -2], kind="stable")]:
            for n2 in pref[k]:
                if n2 == n:
                    continue
                trial = idx.copy()
                trial[k] = n2
                _, f2 = shrink_to_fit(scn, trial, s, margin, slack=LAT_SLACK)
                if n2 not in f2:
                    idx = trial
                    moved = True
                    break
            if moved:
                break
        if not moved:
            raise InfeasibleScenarioError(f"repair exhausted: server {n} over capacity")
    else:
        raise InfeasibleScenarioError("repair exhausted after K moves")

    A = one_hot(idx, N)
    cand = vars.with_(A_hat=A, s=s_fit, r=r)
    L = scn.curves.sigma * s_fit / (scn.R * 1e6) + scn.l[np.arange(K), idx] \
        + scn.curves.complexity(s_fit) / r
    load = np.bincount(idx, weights=r, minlength=N)
    bad = set(np.flatnonzero(load > scn.S)) | set(idx[L > scn.L_max])
    changed = np.flatnonzero(np.any(one_hot(np.argmax(vars.A_hat, 1), N) != A, axis=1))
    bad |= set(idx[changed])
    for n in sorted(bad):
        members = np.flatnonzero(idx == n)
        need = min_resource(scn, s_fit, idx, LAT_SLACK)[members]
        left = scn.S[n] * (1 - margin) - need.sum()
        r[members] = need + left / members.size
    cand = cand.with_(r=r)
    if not is_feasible(cand, scn):
        raise InfeasibleScenarioError("repaired point still infeasible")
    return with_auxiliaries(cand, scn)


# ---------------------------------------------------------------------------
# reports

@dataclass
class SolveReport:
    algorithm: str
    vars: DecisionVars
    Q: float
    breakdown: object = None
    Q_history: list = field(default_factory=list)
    true_Q_history: list = field(default_factory=list)
    mu_history: list = field(default_factory=list)
    gap_history: list = field(default_factory=list)
    stable_from: int = 0
    iters_sca: int = 0
    iters_pr: int = 0
    iters_bcd: int = 0
    gap_before_rounding: float = 0.0
    residuals: dict = field(default_factory=dict)
    wall_seconds: float = 0.0
    status: str = "ok"
    seed: int | None = None

    @property
    def feasible(self) -> bool:
        return is_feasible_dict(self.residuals)

    def to_text(self, timing: bool = True) -> str:
        """Line-oriented ``key = value`` serialisation, one key per line."""
        def vec(x):
            return " ".join(f"{v:.12g}" for v in np.ravel(x))

        b = self.breakdown
        lines = [
            f"algorithm = {self.algorithm}",
            f"status = {self.status}",
            f"seed = {self.seed}",
            f"K = {self.vars.K}",
            f"N = {self.vars.N}",
            f"Q = {self.Q:.12g}",
        ]
        if b is not None:
            lines += [
                f"mean_accuracy = {b.mean_accuracy:.12g}",
                f"mean_latency_s = {b.mean_latency:.12g}",
                f"mean_device_energy_J = {b.mean_device_energy:.12g}",
                f"mean_server_energy_J = {b.mean_server_energy:.12g}",
            ]
        lines += [
            f"iters_sca = {self.iters_sca}",
            f"iters_pr = {self.iters_pr}",
            f"iters_bcd = {self.iters_bcd}",
            f"gap_before_rounding = {self.gap_before_rounding:.6g}",
            f"stable_from = {self.stable_from}",
            f"Q_history = {vec(self.Q_history)}",
            f"true_Q_history = {vec(self.true_Q_history)}",
            f"mu_history = {vec(self.mu_history)}",
        ]
        lines += [f"residual_{k} = {v:.6g}" for k, v in self.residuals.items()]
        lines += [
            f"assignment = {' '.join(str(int(i)) for i in np.argmax(self.vars.A_hat, 1))}",
            f"f = {vec(self.vars.f)}",
            f"s = {vec(self.vars.s)}",
            f"r = {vec(self.vars.r)}",
        ]
        if timing:
            lines.append(f"wall_seconds = {self.wall_seconds:.3f}")
        return "\n".join(lines) + "\n"


def parse_report(text: str) -> dict:
    """Inverse of ``SolveReport.to_text`` into a plain dict of strings."""
    out = {}
    for line in text.splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            out[k.strip()] = v.strip()
    return out


def is_feasible_dict(res: dict, box_tol=1e-9, nl_tol=1e-6) -> bool:
    if not res:
        return False
    return all(res[k] <= box_tol for k in ("C3", "C4", "C5", "C6")) and \
        all(res[k] <= nl_tol for k in ("C1", "C2", "C7"))


def finish_report(name, vars, scn, t0, **kw) -> SolveReport:
    b = objective(vars, scn)
    return SolveReport(algorithm=name, vars=vars, Q=b.Q, breakdown=b,
                       residuals=constraint_residuals(vars, scn),
                       wall_seconds=time.perf_counter() - t0, seed=scn.seed, **kw)


# ---------------------------------------------------------------------------
# outer loop

def initial_mu(Q0: float, K: int, settings: SolverSettings) -> float:
    if settings.mu_init is not None:
        return float(settings.mu_init)
    return MU_SCALE * max(1.0, abs(Q0)) / K


MU_SCALE = 1e-3


def bcd(scn: Scenario, start: DecisionVars, settings: SolverSettings | None = None,
        free=FREE_ALL, update_f: bool = True, name: str = "leao") -> SolveReport:
    """Penalised BCD, rounding, then BCD with the assignment fixed."""
    st = settings or SolverSettings()
    t0 = time.perf_counter()
    vars = start
    relaxed = "A" in free
    mu = initial_mu(objective(vars, scn).Q, scn.K, st) if relaxed else 0.0
    pen = PenaltyState(mu, rho=st.mu_growth, eps_bin=st.eps_bin)
    rep = SolveReport(name, vars, np.nan)
    n_sca = n_pr = n_bcd = 0

    def record(v, mu_now):
        rep.true_Q_history.append(objective(v, scn).Q)
        rep.Q_history.append(true_merit(v, scn, mu_now))
        rep.mu_history.append(mu_now)
        rep.gap_history.append(binarity_gap(v.A_hat))

    warm = {}
    if relaxed:
        vars = interiorize(vars, scn, MIX, st)
        record(vars, pen.mu)
        prev = rep.Q_history[-1]
        for _ in range(st.theta_max):
            n_bcd += 1
            if update_f:
                vars = vars.with_(f=optimal_f_step(vars, scn))
            vars, k_pr, k_sca, _ = product_replacement_solve(scn, vars, pen.mu, st, free, warm)
            n_pr += k_pr
            n_sca += k_sca
            pen.gap = binarity_gap(vars.A_hat)
            record(vars, pen.mu)
            cur = rep.Q_history[-1]
            if pen.gap <= pen.eps_bin:
                if abs(cur - prev) <= st.tau * abs(prev):
                    break
            else:
                pen.escalate()
            prev = cur
        rep.gap_before_rounding = binarity_gap(vars.A_hat)
        vars = round_and_repair(vars, scn, st)
        free = tuple(x for x in free if x != "A")

    # assignment fixed from here on; the penalty is identically zero
    rep.stable_from = len(rep.Q_history)
    warm = {}
    if free:
        vars = interiorize(vars, scn, 0.0, st)
    record(vars, pen.mu)
    prev = rep.true_Q_history[-1]
    best = vars
    for _ in range(st.theta_max if free or update_f else 0):
        n_bcd += 1
        if update_f:
            vars = vars.with_(f=optimal_f_step(vars, scn))
        if free:
            vars, k_pr, k_sca, _ = product_replacement_solve(scn, vars, 0.0, st, free, warm)
            n_pr += k_pr
            n_sca += k_sca
        record(vars, pen.mu)
        cur = rep.true_Q_history[-1]
        best = vars
        if abs(cur - prev) <= st.tau * abs(prev):
            break
        prev = cur
    rep.Q_history = [float(q) for q in rep.Q_history]
    out = finish_report(name, with_auxiliaries(best, scn), scn, t0,
                        Q_history=rep.Q_history, true_Q_history=rep.true_Q_history,
                        mu_history=rep.mu_history, gap_history=rep.gap_history,
                        stable_from=rep.stable_from, iters_sca=n_sca, iters_pr=n_pr,
                        iters_bcd=n_bcd, gap_before_rounding=rep.gap_before_rounding)
    if not out.feasible:
        out.status = "infeasible"
    return out


def leao_solve(scn: Scenario, settings: SolverSettings | None = None) -> SolveReport:
    start = initial_feasible_point(scn)
    return bcd(scn, start, settings, FREE_ALL, update_f=True, name="leao")
