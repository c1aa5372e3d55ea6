"""Shared solver machinery.

* ``solve_convex``: a primal-dual interior-point method on the log-barrier
  central path. Problems supply the Newton system; ``ConvexSubproblem`` is the
  dense reference implementation, the structured block problem of the LEAO
  solver lives in ``leao``.
* ``optimal_f_step``: exact per-device minimisation over CPU frequency.
* feasible-point construction for fixed or greedy assignments.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .models import DecisionVars, ModelCurves, constraint_residuals
from .scenario import Scenario, canonical_point

log = logging.getLogger(__name__)


class ConvexSolveError(RuntimeError):
    pass


class InfeasibleScenarioError(RuntimeError):
    pass


@dataclass(frozen=True)
class SolverSettings:
    tau: float = 1e-3
    zeta_max: int = 50          # SCA iterations
    eta_max: int = 50           # product-replacement iterations
    theta_max: int = 30         # BCD iterations
    mu_init: float | None = None
    mu_growth: float = 5.0
    eps_bin: float = 1e-3
    barrier_t0: float = 1.0     # initial barrier weight floor for cold starts
    barrier_growth: float = 10.0
    warm_gap: float = 1e-2
    gap_tol: float = 1e-8       # duality gap, relative to 1 + |f|
    sca_gap: float = 1e-4       # inner gap as a fraction of the last SCA decrease
    newton_tol: float = 1e-8    # dual residual, relative to 1 + |grad f|
    max_newton: int = 200
    margin: float = 1e-6
    capacity_margin: float = 1e-4

    def replace(self, **kw) -> "SolverSettings":
        import dataclasses

        return dataclasses.replace(self, **kw)


@dataclass
class ConvexResult:
    x: np.ndarray
    value: float
    start_value: float
    newton_iterations: int
    barrier_weight: float
    kkt_residual: float
    converged: bool
    warning: str | None = None
    lam: np.ndarray | None = None
    nu: np.ndarray | None = None


def _residuals(prob, x, lam, nu, sl, t, c):
    rd = prob.dual_residual(x, lam, nu)
    rp = c + sl
    rc = lam * sl - 1.0 / t
    return math.sqrt(float(np.dot(rd, rd) + np.dot(rp, rp) + np.dot(rc, rc))), rd, rp


def _ftb(v, dv) -> float:
    """Largest step keeping ``v + step * dv`` positive."""
    neg = dv < 0
    return float(np.min(-v[neg] / dv[neg])) if np.any(neg) else np.inf


def solve_convex(prob, x0, settings: SolverSettings | None = None,
                 t0: float | None = None, gap: float | None = None,
                 lam0: np.ndarray | None = None) -> ConvexResult:
    """Minimise ``prob`` from the strictly feasible point ``x0``.

    Primal-dual interior-point iterations on ``c(x) + s = 0, s > 0`` (one
    slack and one multiplier per inequality, equality multipliers from the
    Newton KKT system). Slacks and multipliers follow a fraction-to-boundary
    rule and the step is backtracked on the full residual norm, so
    intermediate primal iterates may leave the feasible set slightly; a final
    iterate outside it is pulled back toward ``x0`` along the segment, which
    convexity keeps strictly feasible. ``lam0`` warm-starts the
    multipliers; otherwise they start on the central path of weight ``t0``.
    Stops when the surrogate duality gap is below ``gap`` (default
    ``gap_tol * (1 + |f|)``) and the dual and primal residuals are below
    ``newton_tol``.

    The returned value never exceeds the start value: if the iterates end
    above it (the start was already optimal to within the final gap) the
    start is returned instead.

    Problems implement ``n_ineq``, ``objective``, ``strictly_feasible``,
    ``constraint_values`` (all ``< 0`` inside), ``pd_step(x, lam, sl, rp)``
    returning ``(dx0, dx1, nu0, nu1, jd0, jd1)`` with the reduced Newton
    direction ``dx0 + dx1 / t`` at barrier weight ``t``, the matching equality
    multipliers and the constraint derivatives ``J dx0``, ``J dx1``,
    ``dual_residual(x, lam, nu)`` and
    ``max_step(x, dx)`` (largest step keeping ``x`` in the objective domain).
    """
    st = settings or SolverSettings()
    res = _solve(prob, x0, st, t0, gap, lam0)
    if lam0 is not None and not res.converged:
        # warm multipliers can be badly off-centre for a changed problem
        cold = _solve(prob, x0, st, t0, gap, None)
        cold.newton_iterations += res.newton_iterations
        if cold.converged or cold.value < res.value:
            res = cold
    return res


def _solve(prob, x0, st: SolverSettings, t0, gap, lam0) -> ConvexResult:
    x = np.array(x0, dtype=float, copy=True)
    if not prob.strictly_feasible(x):
        raise ConvexSolveError("start point is not strictly feasible")
    f_start = prob.objective(x)
    m = prob.n_ineq
    c = prob.constraint_values(x)
    sl = -c
    if lam0 is not None and np.shape(lam0) == (m,):
        lam = np.maximum(np.asarray(lam0, dtype=float), 1e-14)
    else:
        if t0 is None:
            t0 = max(st.barrier_t0, m / (st.warm_gap * (1.0 + abs(f_start))))
        lam = 1.0 / (t0 * sl)
    target = gap if gap is not None else st.gap_tol * (1.0 + abs(f_start))
    p_tol = st.newton_tol * (1.0 + float(np.max(np.abs(c), initial=0.0)))
    nu = None
    total = 0
    warning = None
    converged = False
    t = 1.0
    dual_scale = 1.0
    x_start, c_start = x, c
    short = 0
    while True:
        eta = float(np.dot(sl, lam)) if m else 0.0
        rp = c + sl
        # the Newton direction is affine in 1/t: d(t) = d0 + d1 / t
        dx0, dx1, nu0, nu1, jd0, jd1 = prob.pd_step(x, lam, sl, rp)
        dl0 = -lam + lam * (jd0 + rp) / sl
        dl1 = (lam * jd1 + 1.0) / sl
        if m:
            # centring weight from the affine-scaling step (Mehrotra)
            ds0 = -sl - sl * dl0 / lam
            a_aff = min(1.0, _ftb(lam, dl0), _ftb(sl, ds0), prob.max_step(x, dx0))
            mu_aff = float(np.dot(sl + a_aff * ds0, lam + a_aff * dl0)) / m
            sigma = min(1.0, max((mu_aff / (eta / m)) ** 3, st.barrier_growth ** -2))
            # never aim below the requested gap; past it only feasibility is left
            t = min(m / max(sigma * eta, 1e-300), st.barrier_growth * m / target)
        else:
            t = 1.0
        dx, nu_new, dlam = dx0 + dx1 / t, nu0 + nu1 / t, dl0 + dl1 / t
        if nu is None:
            nu = nu_new
        r0, rd, rp = _residuals(prob, x, lam, nu, sl, m / max(eta, 1e-300) if m else 1.0, c)
        near = False
        if eta <= target and np.max(np.abs(rp), initial=0.0) <= p_tol:
            # dual residual relative to the size of the terms it sums
            g0 = prob.dual_residual(x, 0 * lam, 0 * nu)
            g1 = prob.dual_residual(x, lam, 0 * nu) - g0
            dual_scale = 1.0 + float(np.max(np.abs(g0), initial=0.0) + np.max(np.abs(g1), initial=0.0))
            rd_max = np.max(np.abs(rd), initial=0.0)
            if rd_max <= st.newton_tol * dual_scale:
                converged = True
                break
            near = rd_max <= math.sqrt(st.newton_tol) * dual_scale
        if total >= st.max_newton:
            warning = "Newton iteration cap reached"
            break
        if not (np.all(np.isfinite(dx)) and np.all(np.isfinite(dlam))):
            warning = "non-finite Newton direction"
            break
        dnu = nu_new - nu
        dsl = -(lam * sl - 1.0 / t + sl * dlam) / lam
        # separate primal and dual step lengths
        s = min(1.0, 0.99 * min(_ftb(sl, dsl), prob.max_step(x, dx)))
        s_dual = min(1.0, 0.99 * _ftb(lam, dlam))
        r0 = _residuals(prob, x, lam, nu, sl, t, c)[0]
        s_min = 1e-2 if near else 1e-10
        s_full = s
        # split steps first; a common step length (a scaled Newton step, so a
        # descent direction of the residual) if that fails
        for joint in (False, True):
            if joint:
                s = s_dual = s_full = min(s_full, s_dual)
            while s > s_min:
                sd = s_dual * s / s_full
                xn, ln, nn, sn = x + s * dx, lam + sd * dlam, nu + sd * dnu, sl + s * dsl
                cn = prob.constraint_values(xn)
                if np.all(np.isfinite(cn)):
                    rn = _residuals(prob, xn, ln, nn, sn, t, cn)[0]
                    if rn <= (1.0 - 0.01 * s) * r0:
                        break
                s *= 0.5
            if s > s_min or s_dual >= s_full:
                break
        total += 1
        if s <= s_min:
            if near:
                # precision floor of the Newton system; the point is acceptable
                converged = True
            else:
                warning = "line search stalled"
            break
        x, lam, nu, sl, c = xn, ln, nn, sn, cn
        short = short + 1 if s < 1e-6 else 0
        if short >= 3:
            converged = near
            warning = None if near else "no progress"
            break
    c = prob.constraint_values(x)
    if not (np.all(c < 0) and prob.strictly_feasible(x)):
        # pull back toward the start: by convexity c(x + th (x0 - x)) <= (1 - th) c(x) + th c(x0)
        over = c >= -1e-300
        th = float(np.max(c[over] / (c[over] - c_start[over]))) if np.any(over) else 0.0
        th = min(1.0, max(2.0 * th, 1e-9))
        while th < 1.0:
            xt = x + th * (x_start - x)
            if prob.strictly_feasible(xt):
                break
            th = min(1.0, 4.0 * th)
        x = x + th * (x_start - x) if th < 1.0 else x_start
    value = prob.objective(x)
    rd = prob.dual_residual(x, lam, nu)
    eta = float(np.dot(sl, lam)) if m else 0.0
    kkt = max(float(np.max(np.abs(rd), initial=0.0)) / dual_scale,
              eta / (1.0 + abs(value)))
    if value > f_start:
        x = np.array(x0, dtype=float, copy=True)
        value = f_start
    if warning:
        log.debug("solve_convex: %s after %d Newton steps", warning, total)
    return ConvexResult(x, value, f_start, total, t, kkt, converged, warning, lam, nu)


# ---------------------------------------------------------------------------
# dense reference problem

Evaluator = Callable[[np.ndarray], tuple]


@dataclass
class ConvexSubproblem:
    """Smooth convex program ``min f(x) s.t. g_i(x) <= 0, A x = b, lo <= x <= hi``.

    ``objective_fn`` and each entry of ``inequalities`` return
    ``(value, gradient, hessian)``.
    """

    objective_fn: Evaluator
    inequalities: Sequence[Evaluator] = ()
    A_eq: np.ndarray | None = None
    b_eq: np.ndarray | None = None
    lower: np.ndarray | None = None
    upper: np.ndarray | None = None
    dim: int = field(default=0)

    def __post_init__(self):
        if self.dim == 0:
            for arr in (self.lower, self.upper):
                if arr is not None:
                    self.dim = len(arr)
        if self.dim <= 0:
            raise ValueError("ConvexSubproblem needs dim (or bounds to infer it from)")
        lo = np.full(self.dim, -np.inf) if self.lower is None else np.asarray(self.lower, float)
        hi = np.full(self.dim, np.inf) if self.upper is None else np.asarray(self.upper, float)
        self._lo, self._hi = lo, hi
        self._ilo, self._ihi = np.flatnonzero(np.isfinite(lo)), np.flatnonzero(np.isfinite(hi))

    @property
    def n_ineq(self) -> int:
        return len(self.inequalities) + self._ilo.size + self._ihi.size

    def objective(self, x) -> float:
        return float(self.objective_fn(x)[0])

    def constraint_values(self, x) -> np.ndarray:
        g = [gi(x)[0] for gi in self.inequalities]
        return np.concatenate([np.asarray(g, float), self._lo[self._ilo] - x[self._ilo],
                               x[self._ihi] - self._hi[self._ihi]])

    def strictly_feasible(self, x) -> bool:
        if self.A_eq is not None and np.max(np.abs(self.A_eq @ x - self.b_eq)) > 1e-8:
            return False
        return bool(np.all(self.constraint_values(x) < 0))

    def _jac(self, x):
        rows = [np.asarray(gi(x)[1], float) for gi in self.inequalities]
        E = np.eye(self.dim)
        return np.vstack(rows + [-E[self._ilo], E[self._ihi]]) if self.n_ineq else np.zeros((0, self.dim))

    def dual_residual(self, x, lam, nu):
        r = np.asarray(self.objective_fn(x)[1], float) + self._jac(x).T @ lam
        if self.A_eq is not None:
            r = r + self.A_eq.T @ nu
        return r

    def pd_step(self, x, lam, sl, rp):
        _, g, H = self.objective_fn(x)
        H = np.atleast_2d(np.asarray(H, float)).copy()
        J = self._jac(x)
        for i, gi in enumerate(self.inequalities):
            H += lam[i] * np.atleast_2d(gi(x)[2])
        H += (J.T * (lam / sl)) @ J
        rhs = np.column_stack([-(np.asarray(g, float) + J.T @ (lam * rp / sl)), -(J.T @ (1.0 / sl))])
        n = self.dim
        if self.A_eq is None:
            sol = np.linalg.solve(H, rhs)
            nu = np.zeros((0, 2))
        else:
            p = self.A_eq.shape[0]
            M = np.block([[H, self.A_eq.T], [self.A_eq, np.zeros((p, p))]])
            sol = np.linalg.solve(M, np.vstack([rhs, np.zeros((p, 2))]))
            sol, nu = sol[:n], sol[n:]
        dx = sol[:n]
        jd = J @ dx
        return dx[:, 0], dx[:, 1], nu[:, 0], nu[:, 1], jd[:, 0], jd[:, 1]

    def max_step(self, x, dx) -> float:
        # bounds are slacked like every other inequality
        return np.inf

# ---------------------------------------------------------------------------
# CPU frequency

def minimize_frequency(L, t_pre, curves: ModelCurves, f_min, f_max):
    """Global minimiser over ``[f_min, f_max]`` of ``t_pre P_pre(f) + P_bs(f) L``.

    The derivative is quadratic in ``f``; its real roots inside the box and
    both endpoints form the candidate set. Ties go to the lower frequency.
    """
    L = np.atleast_1d(np.asarray(L, dtype=float))
    t_pre = np.broadcast_to(np.asarray(t_pre, dtype=float), L.shape)
    d2, d1, d0 = np.polyder(curves.p_pre)
    a = t_pre * d2
    b = t_pre * d1
    c = t_pre * d0 + curves.p_bs[0] * L
    disc = b * b - 4 * a * c
    with np.errstate(invalid="ignore", divide="ignore"):
        sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
        quad = np.abs(a) > 1e-300
        r1 = np.where(quad, (-b - sq) / (2 * a), np.where(b != 0, -c / b, np.nan))
        r2 = np.where(quad, (-b + sq) / (2 * a), np.nan)
    roots = np.stack([np.minimum(r1, r2), np.maximum(r1, r2)], axis=1)
    roots = np.where((roots >= f_min) & (roots <= f_max), roots, np.nan)
    cand = np.column_stack([np.full(L.shape, f_min), roots, np.full(L.shape, f_max)])

    def g(f):
        return t_pre[:, None] * curves.power_pre(f) + curves.power_bs(f) * L[:, None]

    vals = np.where(np.isnan(cand), np.inf, g(np.nan_to_num(cand, nan=f_min)))
    best = np.argmin(vals, axis=1)
    return cand[np.arange(L.size), best]


def optimal_f_step(vars: DecisionVars, scn: Scenario) -> np.ndarray:
    from .models import latencies

    L = latencies(vars, scn)[3]
    return minimize_frequency(L, scn.curves.t_pre, scn.curves, scn.f_min, scn.f_max)


# ---------------------------------------------------------------------------
# feasible points

def assignment_index(A_hat) -> np.ndarray:
    """Row-wise argmax (lowest index on ties)."""
    return np.argmax(np.asarray(A_hat), axis=1)


def one_hot(idx, N) -> np.ndarray:
    A = np.zeros((len(idx), N))
    A[np.arange(len(idx)), idx] = 1.0
    return A


def min_resource(scn: Scenario, s, idx, slack: float = 0.0) -> np.ndarray:
    """Smallest ``r_k`` meeting the latency budget (less ``slack``) on server ``idx[k]``; inf if none."""
    cv = scn.curves
    s = np.asarray(s, dtype=float)
    den = scn.L_max - slack - cv.sigma * s / (scn.R * 1e6) - scn.l[np.arange(scn.K), idx]
    with np.errstate(divide="ignore"):
        return np.where(den > 0, cv.complexity(s) / np.where(den > 0, den, 1.0), np.inf)


def need_matrix(scn: Scenario, s, slack: float = 0.0) -> np.ndarray:
    """``min_resource`` for every device/server pair, shape (K, N)."""
    cv = scn.curves
    s = np.asarray(s, dtype=float)
    den = scn.L_max[:, None] - slack - (cv.sigma * s / (scn.R * 1e6))[:, None] - scn.l
    c = cv.complexity(s)[:, None]
    with np.errstate(divide="ignore"):
        return np.where(den > 0, c / np.where(den > 0, den, 1.0), np.inf)


def max_resolution(scn: Scenario, r, idx, s_hi=None, iters: int = 80, slack: float = 0.0) -> np.ndarray:
    """Largest ``s`` in ``[s_lower, s_hi]`` meeting the latency budget; nan where none."""
    cv = scn.curves
    lo = np.full(scn.K, scn.s_lower)
    hi = np.full(scn.K, scn.s_max) if s_hi is None else np.minimum(np.asarray(s_hi, float), scn.s_max)
    l_sel = scn.l[np.arange(scn.K), idx]

    def lat(s):
        return cv.sigma * s / (scn.R * 1e6) + l_sel + cv.complexity(s) / r

    budget = scn.L_max - slack
    ok_lo = lat(lo) <= budget
    ok_hi = lat(hi) <= budget
    a, b = lo.copy(), hi.copy()
    for _ in range(iters):
        mid = 0.5 * (a + b)
        fit = lat(mid) <= budget
        a = np.where(fit, mid, a)
        b = np.where(fit, b, mid)
    out = np.where(ok_hi, hi, a)
    return np.where(ok_lo, out, np.nan)


def allocate_resources(scn: Scenario, idx, s, margin: float = 0.0, slack: float = 0.0):
    """Minimum need plus an equal share of each server's leftover capacity.

    Returns ``(r, overloaded_servers)``; ``r`` is None when some server cannot
    cover its devices' needs.
    """
    need = min_resource(scn, s, idx, slack)
    load = np.bincount(idx, weights=np.where(np.isfinite(need), need, 0.0), minlength=scn.N)
    count = np.bincount(idx, minlength=scn.N)
    cap = scn.S * (1.0 - margin)
    bad_dev = ~np.isfinite(need)
    over = np.flatnonzero((load > cap) | (np.bincount(idx, weights=bad_dev, minlength=scn.N) > 0))
    if over.size:
        return None, over
    share = np.where(count > 0, (cap - load) / np.maximum(count, 1), 0.0)
    return need + share[idx], over


def shrink_to_fit(scn: Scenario, idx, s, margin: float = 0.0, iters: int = 60,
                  slack: float = 0.0):
    """Scale each server's resolutions toward ``s_lower`` until its needs fit.

    Returns ``(s_new, failed_servers)``.
    """
    s = np.asarray(s, dtype=float).copy()
    lo = scn.s_lower
    failed = []
    cap = scn.S * (1.0 - margin)
    for n in range(scn.N):
        members = np.flatnonzero(idx == n)
        if members.size == 0:
            continue

        def load(theta):
            trial = s.copy()
            trial[members] = lo + theta * (s[members] - lo)
            nd = min_resource(scn, trial, idx, slack)[members]
            return nd.sum() if np.all(np.isfinite(nd)) else np.inf

        if load(1.0) <= cap[n]:
            continue
        if not load(0.0) <= cap[n]:
            failed.append(n)
            s[members] = lo
            continue
        a, b = 0.0, 1.0
        for _ in range(iters):
            mid = 0.5 * (a + b)
            if load(mid) <= cap[n]:
                a = mid
            else:
                b = mid
        s[members] = lo + a * (s[members] - lo)
    return s, failed


def capacity_aware_point(scn: Scenario, margin: float = 0.0,
                         slack: float = 0.0) -> DecisionVars | None:
    """Greedy assignment at minimum resolution: devices with the most to lose choose first."""
    s = np.full(scn.K, scn.s_lower)
    need = need_matrix(scn, s, slack)
    srt = np.sort(need, axis=1)
    with np.errstate(invalid="ignore"):
        regret = (srt[:, 1] - srt[:, 0]) if scn.N > 1 else srt[:, 0]
    regret = np.where(np.isfinite(regret), regret, 1e300)
    order = np.argsort(-regret, kind="stable")
    remaining = scn.S * (1.0 - margin)
    idx = np.empty(scn.K, dtype=int)
    for k in order:
        fits = np.flatnonzero(need[k] <= remaining)
        if fits.size == 0:
            return None
        n = fits[np.argmin(scn.l[k, fits])]
        idx[k] = n
        remaining[n] -= need[k, n]
    r, over = allocate_resources(scn, idx, s, margin, slack)
    if r is None:
        return None
    return DecisionVars(f=np.full(scn.K, scn.f_min), s=s, A_hat=one_hot(idx, scn.N), r=r)


def initial_feasible_point(scn: Scenario, tol: float = 1e-9) -> DecisionVars:
    """Nearest-server start with equal split; capacity-aware greedy if that fails.

    Auxiliaries are set to their closed forms at the returned point.
    """
    from .leao import with_auxiliaries

    vars = canonical_point(scn)
    if not all(v <= tol for v in constraint_residuals(vars, scn).values()):
        vars = capacity_aware_point(scn)
        if vars is None:
            raise InfeasibleScenarioError(
                f"no feasible assignment at minimum resolution (K={scn.K}, N={scn.N}, "
                f"capacity {scn.S.sum():.2f} TFLOPS)")
    return with_auxiliaries(vars, scn)


def is_feasible(vars: DecisionVars, scn: Scenario, box_tol=1e-9, nl_tol=1e-6) -> bool:
    res = constraint_residuals(vars, scn)
    return all(res[k] <= box_tol for k in ("C3", "C4", "C5", "C6")) and \
        all(res[k] <= nl_tol for k in ("C1", "C2", "C7"))
