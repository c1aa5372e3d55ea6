"""Brute-force reference solutions for tiny instances.

Every binary assignment is enumerated. Once the assignment and the resource
split are fixed the devices decouple, so for each device and each candidate
``r_k`` the best ``(s_k, f_k)`` is found on its own grid (plus the
latency-limited resolution, and the closed-form frequency). Each server's
split is then solved exactly over its ``r`` grid by a min-plus recursion
under the capacity budget. Refinement rounds halve the search windows
around the incumbent.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .models import DecisionVars, constraint_residuals, objective
from .scenario import Scenario
from .solver_core import minimize_frequency, one_hot

MAX_K, MAX_N = 4, 3
BOX_TOL, NL_TOL = 1e-9, 1e-6


class OracleSizeError(ValueError):
    """Instance too large to enumerate."""


@dataclass
class OracleResult:
    Q: float
    vars: DecisionVars
    n_assignments: int
    grid: int
    rounds: int
    s_step: float                       # final resolution spacing
    r_step: np.ndarray                  # final resource spacing per server
    Q_rounds: list = field(default_factory=list)
    bracket: float = 0.0                # one-step value change around the incumbent

    @property
    def assignment(self) -> tuple:
        return tuple(int(i) for i in np.argmax(self.vars.A_hat, axis=1))

    @property
    def grid_slack(self) -> float:
        """Estimated distance to the continuous optimum.

        The continuous optimum near the incumbent can be snapped down onto
        the final grid (rounding ``r`` down keeps the budget), losing at most
        about one grid step of each device's value: that is ``bracket``. The
        gain of the last round is added for what further rounds would find;
        a round can gain nothing while the optimum still sits between grid
        points, so the gain alone is not a bound.
        """
        if len(self.Q_rounds) < 2:
            return float("inf")
        last = max(self.Q_rounds[-2] - self.Q_rounds[-1], 0.0)
        return float(last + self.bracket) + 1e-9 * abs(self.Q)

    def to_text(self) -> str:
        def vec(x):
            return " ".join(f"{v:.12g}" for v in np.ravel(x))

        lines = [
            "algorithm = oracle",
            f"Q = {self.Q:.12g}",
            f"n_assignments = {self.n_assignments}",
            f"grid = {self.grid}",
            f"rounds = {self.rounds}",
            f"s_step = {self.s_step:.6g}",
            f"r_step = {vec(self.r_step)}",
            f"grid_slack = {self.grid_slack:.6g}",
            f"bracket = {self.bracket:.6g}",
            f"Q_rounds = {vec(self.Q_rounds)}",
            f"assignment = {' '.join(map(str, self.assignment))}",
            f"f = {vec(self.vars.f)}",
            f"s = {vec(self.vars.s)}",
            f"r = {vec(self.vars.r)}",
        ]
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# per-device pieces

def _s_fit(scn: Scenario, k: int, n: int, r, iters=100):
    """Largest resolution within the latency budget for each ``r``; nan if none."""
    cv = scn.curves
    r = np.asarray(r, dtype=float)

    def lat(s):
        return cv.sigma * s / (scn.R[k] * 1e6) + scn.l[k, n] + cv.complexity(s) / r

    lo = np.full(r.shape, scn.s_lower)
    hi = np.full(r.shape, scn.s_max)
    ok_lo, ok_hi = lat(lo) <= scn.L_max[k], lat(hi) <= scn.L_max[k]
    a, b = lo.copy(), hi.copy()
    for _ in range(iters):
        m = 0.5 * (a + b)
        fit = lat(m) <= scn.L_max[k]
        a, b = np.where(fit, m, a), np.where(fit, b, m)
    return np.where(ok_lo, np.where(ok_hi, hi, a), np.nan)


def device_value(scn: Scenario, k: int, n: int, r, s):
    """Device ``k``'s share of Q on server ``n`` with the best frequency; inf if infeasible.

    ``r`` and ``s`` broadcast against each other. Returns ``(value, f)``.
    """
    cv = scn.curves
    r, s = np.broadcast_arrays(np.asarray(r, float), np.asarray(s, float))
    with np.errstate(divide="ignore", invalid="ignore"):
        L_t = cv.sigma * s / (scn.R[k] * 1e6)
        L = L_t + scn.l[k, n] + cv.complexity(s) / r
        f = minimize_frequency(np.where(np.isfinite(L), L, 0.0).ravel(), cv.t_pre, cv,
                               scn.f_min, scn.f_max).reshape(L.shape)
        E_k = cv.t_pre * cv.power_pre(f) + cv.power_tr(scn.R[k]) * L_t + cv.power_bs(f) * L
        E_srv = cv.power_server(r * scn.F[n] / scn.S[n]) * cv.complexity(s) / r
        val = E_srv / scn.N + (E_k + scn.lambda1[k] * L - scn.lambda2[k] * cv.accuracy(s)) / scn.K
    ok = (r > 0) & (L <= scn.L_max[k]) & (s >= scn.s_lower) & (s <= scn.s_max) \
        & (cv.accuracy(s) >= cv.A_min)
    return np.where(ok, val, np.inf), f


def _best_over_s(scn, k, n, r, s_grid):
    """Minimum over ``s_grid`` plus the latency-limited resolution, per ``r``."""
    cand = np.broadcast_to(s_grid, (r.size, s_grid.size))
    cand = np.column_stack([cand, _s_fit(scn, k, n, r)])
    cand = np.where(np.isnan(cand), scn.s_lower, cand)
    val, f = device_value(scn, k, n, r[:, None], cand)
    j = np.argmin(val, axis=1)
    rows = np.arange(r.size)
    return val[rows, j], cand[rows, j], f[rows, j]


def _min_plus(tables, budget: int):
    """Pick one index per table minimising the sum with index total <= budget."""
    h = tables[0].copy()
    back = []
    for g in tables[1:]:
        G = g.size
        T = h.size + G - 1
        new = np.full(T, np.inf)
        arg = np.zeros(T, dtype=int)
        for j in range(G):
            v = h + g[j]
            seg = slice(j, j + h.size)
            better = v < new[seg]
            new[seg] = np.where(better, v, new[seg])
            arg[seg] = np.where(better, j, arg[seg])
        back.append(arg)
        h = new
    h = h[:budget + 1]
    if h.size == 0 or not np.isfinite(h).any():
        return np.inf, None
    t = int(np.argmin(h))
    best = float(h[t])
    picks = []
    for arg in reversed(back):
        j = int(arg[t])
        picks.append(j)
        t -= j
    picks.append(t)
    return best, picks[::-1]


def _bracket(scn, k, n, tab, j, r, s, s_step):
    """Largest change of device ``k``'s value one grid step from ``(r[j], s)``."""
    near = [tab[i] for i in (j - 1, j + 1) if 0 <= i < tab.size and np.isfinite(tab[i])]
    for ds in (-s_step, s_step):
        if scn.s_lower <= s + ds <= scn.s_max:
            v, _ = device_value(scn, k, n, r[j], s + ds)
            if np.isfinite(v):
                near.append(float(v))
    return max((abs(v - tab[j]) for v in near), default=0.0)


def _solve_server(scn, n, members, G, r_base, r_step, s_windows, s_step=0.0):
    """Best split of server ``n`` among ``members`` on the current grids.

    Returns ``(value, r, s, f, bracket)`` for the members, value inf if
    nothing fits; ``bracket`` sums ``_bracket`` over the members.
    """
    if members.size == 0:
        return 0.0, np.zeros(0), np.zeros(0), np.zeros(0), 0.0
    tabs, picks_s, picks_f, rs = [], [], [], []
    for i, k in enumerate(members):
        r = r_base[i] + r_step * np.arange(G + 1)
        val, s, f = _best_over_s(scn, k, n, np.maximum(r, 1e-300), s_windows[i])
        val = np.where(r > 0, val, np.inf)
        tabs.append(val)
        rs.append(r)
        picks_s.append(s)
        picks_f.append(f)
    budget = int(np.floor((scn.S[n] - np.sum(r_base)) / r_step * (1 + 1e-12) + 1e-9))
    best, picks = _min_plus(tabs, budget)
    if picks is None:
        return np.inf, None, None, None, np.inf
    r = np.array([rs[i][j] for i, j in enumerate(picks)])
    s = np.array([picks_s[i][j] for i, j in enumerate(picks)])
    f = np.array([picks_f[i][j] for i, j in enumerate(picks)])
    spread = sum(_bracket(scn, k, n, tabs[i], picks[i], rs[i], s[i], s_step)
                 for i, k in enumerate(members))
    return best, r, s, f, float(spread)


def _solve_assignment(args):
    scn, idx, G, rounds = args
    idx = np.asarray(idx)
    K, N = scn.K, scn.N
    lo, hi = scn.s_lower, scn.s_max
    s_grid = np.linspace(lo, hi, G)
    r = np.zeros(K)
    s = np.zeros(K)
    f = np.zeros(K)
    total = 0.0
    steps = np.zeros(N)
    history = []
    bracket = 0.0
    for rnd in range(rounds + 1):
        total = 0.0
        bracket = 0.0
        new_r, new_s, new_f = r.copy(), s.copy(), f.copy()
        for n in range(N):
            members = np.flatnonzero(idx == n)
            if rnd == 0:
                step = scn.S[n] / G
                base = np.zeros(members.size)
                windows = [s_grid] * members.size
                ds = s_grid[1] - s_grid[0]
            else:
                step = scn.S[n] / G / 2 ** rnd
                base = r[members] - step * (G // 2)
                half = (hi - lo) / 2 ** (rnd + 1)
                # the incumbent stays a candidate, so a round never gets worse
                windows = [np.append(np.linspace(max(lo, c - half), min(hi, c + half), G), c)
                           for c in s[members]]
                ds = 2 * half / (G - 1)
            steps[n] = step
            val, rn, sn, fn, spread = _solve_server(scn, n, members, G, base, step, windows, ds)
            if not np.isfinite(val):
                return np.inf, idx, None, history, steps, s_grid[1] - s_grid[0], np.inf
            total += val
            bracket += spread
            new_r[members], new_s[members], new_f[members] = rn, sn, fn
        r, s, f = new_r, new_s, new_f
        history.append(total)
    s_step = (hi - lo) / (G - 1) / 2 ** rounds
    return total, idx, (f, s, r), history, steps, s_step, bracket


def assignments(K: int, N: int, order: str = "lex"):
    it = itertools.product(range(N), repeat=K)
    if order == "lex":
        return list(it)
    if order == "reverse":
        return list(it)[::-1]
    raise ValueError(f"unknown order {order!r}")


def brute_force_solve(scn: Scenario, grid: int = 20, rounds: int = 6,
                      order: str = "lex", workers: int = 1) -> OracleResult:
    """Grid-and-enumeration reference optimum of a tiny instance.

    ``grid`` points per axis (rounded up to even), ``rounds`` refinement
    rounds. Ties between assignments go to the lexicographically smallest
    one, so the result does not depend on ``order`` or ``workers``.
    """
    if scn.K > MAX_K or scn.N > MAX_N:
        raise OracleSizeError(f"oracle limited to K<={MAX_K}, N<={MAX_N} (got K={scn.K}, N={scn.N})")
    if grid < 20:
        raise ValueError("grid needs at least 20 points per axis")
    G = int(grid) + int(grid) % 2
    tasks = [(scn, a, G, int(rounds)) for a in assignments(scn.K, scn.N, order)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(_solve_assignment, tasks, chunksize=4))
    else:
        results = [_solve_assignment(t) for t in tasks]

    best = None
    for res in results:
        val, idx = res[0], tuple(int(i) for i in res[1])
        if not np.isfinite(val):
            continue
        if best is None or val < best[0] - 1e-12 * abs(best[0]) or \
                (abs(val - best[0]) <= 1e-12 * abs(best[0]) and idx < tuple(best[1])):
            best = res
    if best is None:
        raise ValueError("no feasible assignment on the oracle grid")
    _, idx, (f, s, r), hist, steps, s_step, bracket = best
    from .leao import with_auxiliaries

    vars = with_auxiliaries(DecisionVars(f=f, s=s, A_hat=one_hot(np.asarray(idx), scn.N), r=r), scn)
    return OracleResult(Q=objective(vars, scn).Q, vars=vars, n_assignments=len(tasks), grid=G,
                        rounds=int(rounds), s_step=float(s_step), r_step=steps.copy(),
                        Q_rounds=[float(q) for q in hist], bracket=float(bracket))


# ---------------------------------------------------------------------------
# constraint check

@dataclass
class ConstraintReport:
    residuals: dict
    tolerances: dict

    @property
    def passed(self) -> dict:
        return {k: v <= self.tolerances[k] for k, v in self.residuals.items()}

    @property
    def ok(self) -> bool:
        return all(self.passed.values())

    def __str__(self) -> str:
        rows = [f"{k}: {v:+.3e} {'PASS' if self.passed[k] else 'FAIL'}"
                for k, v in self.residuals.items()]
        return "\n".join(rows)


def verify_constraints(vars: DecisionVars, scn: Scenario, box_tol: float = BOX_TOL,
                       nl_tol: float = NL_TOL) -> ConstraintReport:
    """Signed worst residual per constraint family; binarity must hold exactly."""
    tol = {"C1": nl_tol, "C2": nl_tol, "C3": box_tol, "C4": box_tol,
           "C5": 0.0, "C6": box_tol, "C7": nl_tol}
    return ConstraintReport(constraint_residuals(vars, scn), tol)
