"""Comparison algorithms: random fixed point, UWO and RAO.

All three start from the same random point. ``Baseline`` evaluates it as is,
UWO re-optimises the device-side variables ``(f, s)`` with the assignment and
resources held, and RAO re-optimises ``(A, r)`` with ``(f, s)`` held.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .leao import SolveReport, bcd, finish_report, with_auxiliaries
from .models import DecisionVars, objective
from .scenario import Scenario
from .solver_core import (
    InfeasibleScenarioError, SolverSettings, is_feasible, max_resolution, min_resource,
    one_hot, optimal_f_step,
)

ALGORITHMS = ("baseline", "uwo", "rao")

# substream tag so the random point never shares draws with scenario generation
_STREAM = 0xBA5E
# the lowered resolution keeps a sliver of room so RAO has a strictly feasible start
HEADROOM = 1e-3       # relative share of r
LAT_HEADROOM = 1e-5   # seconds


@dataclass(frozen=True)
class BaselineSpec:
    algorithm: str = "baseline"
    seed: int = 0

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown baseline {self.algorithm!r}; expected one of {ALGORITHMS}")

    def solve(self, scn: Scenario, settings: SolverSettings | None = None) -> SolveReport:
        if self.algorithm == "baseline":
            return baseline_solve(scn, self.seed)
        if self.algorithm == "uwo":
            return uwo_solve(scn, self.seed)
        return rao_solve(scn, self.seed, settings)


def _rng(scn: Scenario, seed: int) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(scn.trial), _STREAM))
    return np.random.Generator(np.random.PCG64(ss))


def truncated_gaussian(rng, lo, hi, size):
    """Normal around the box midpoint with sd = range/4, clamped to the box."""
    mid, sd = 0.5 * (lo + hi), 0.25 * (hi - lo)
    return np.clip(rng.normal(mid, sd, size=size), lo, hi)


def equal_split(scn: Scenario, idx) -> np.ndarray:
    count = np.bincount(idx, minlength=scn.N)
    return scn.S[idx] / count[idx]


def random_point(scn: Scenario, seed: int) -> DecisionVars:
    """The shared random start of all three comparison algorithms.

    Draw order: ``f``, ``s``, then the server index of each device. Where the
    drawn resolution breaks the latency budget it is lowered to the largest
    value that fits (with ``HEADROOM``/``LAT_HEADROOM`` to spare). If even the
    resolution floor does not fit, a device on that server is moved (uniformly
    at random among the servers that take it without making things worse);
    this repair is the only extra draw.
    """
    K, N = scn.K, scn.N
    rng = _rng(scn, seed)
    f = truncated_gaussian(rng, scn.f_min, scn.f_max, K)
    s = truncated_gaussian(rng, scn.s_min, scn.s_max, K)
    s = np.maximum(s, scn.s_lower)
    idx = rng.integers(0, N, size=K)

    def short(ix):
        # same headroom as the final resolution step below
        need = min_resource(scn, np.full(K, scn.s_lower), ix, slack=LAT_HEADROOM)
        return need > equal_split(scn, ix) * (1.0 - HEADROOM)

    for _ in range(K * N + 1):
        bad = short(idx)
        if not bad.any():
            break
        k = int(rng.choice(np.flatnonzero(bad)))
        ok = []
        for n in range(N):
            if n == idx[k]:
                continue
            trial = idx.copy()
            trial[k] = n
            # a move must not create a new short device
            if short(trial).sum() < bad.sum():
                ok.append(n)
        if not ok:
            raise InfeasibleScenarioError(f"random point irreparable: device {k} fits nowhere")
        idx[k] = ok[int(rng.integers(len(ok)))]
    else:
        raise InfeasibleScenarioError("random point irreparable")

    r = equal_split(scn, idx)
    s = max_resolution(scn, r * (1.0 - HEADROOM), idx, s_hi=s, slack=LAT_HEADROOM)
    if np.any(np.isnan(s)):
        raise InfeasibleScenarioError("random point irreparable: latency budget")
    return with_auxiliaries(DecisionVars(f=f, s=s, A_hat=one_hot(idx, N), r=r), scn)


def _report(name, vars, scn, t0, **kw) -> SolveReport:
    rep = finish_report(name, vars, scn, t0, **kw)
    if not rep.feasible:
        rep.status = "infeasible"
    return rep


def baseline_solve(scn: Scenario, seed: int = 0) -> SolveReport:
    t0 = time.perf_counter()
    vars = random_point(scn, seed)
    rep = _report("baseline", vars, scn, t0)
    rep.seed = seed
    return rep


# ---------------------------------------------------------------------------
# UWO

def device_terms(s, vars: DecisionVars, scn: Scenario, idx) -> np.ndarray:
    """Each device's share of Q as a function of its resolution, other variables held.

    ``s`` has shape (K,) or (K, M) for M candidates per device.
    """
    cv = scn.curves
    s = np.asarray(s, dtype=float)
    col = (lambda x: x[:, None]) if s.ndim == 2 else (lambda x: x)
    K, N = scn.K, scn.N
    r = col(vars.r)
    L_t = cv.sigma * s / col(scn.R * 1e6)
    L = L_t + col(scn.l[np.arange(K), idx]) + cv.complexity(s) / r
    E_k = cv.t_pre * col(cv.power_pre(vars.f)) + col(cv.power_tr(scn.R)) * L_t \
        + col(cv.power_bs(vars.f)) * L
    P_n = cv.power_server(vars.r * scn.F[idx] / scn.S[idx])
    E_srv = col(P_n) * cv.complexity(s) / r
    return E_srv / N + (E_k + col(scn.lambda1) * L - col(scn.lambda2) * cv.accuracy(s)) / K


def optimal_s_step(vars: DecisionVars, scn: Scenario, tol: float = 1e-12,
                   iters: int = 200) -> np.ndarray:
    """Per-device minimiser of ``device_terms`` over the latency-feasible range.

    Each device's term is convex in ``s`` (linear plus convex complexity plus
    a concave accuracy with a negative weight), so golden-section search on
    ``[s_lower, s_fit]`` is exact up to ``tol`` relative width.
    """
    idx = np.argmax(vars.A_hat, axis=1)
    hi = max_resolution(scn, vars.r, idx)
    if np.any(np.isnan(hi)):
        raise InfeasibleScenarioError("resolution floor breaks the latency budget")
    lo = np.full(scn.K, scn.s_lower)
    g = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = lo.copy(), hi.copy()
    c, d = b - g * (b - a), a + g * (b - a)
    fc = device_terms(c, vars, scn, idx)
    fd = device_terms(d, vars, scn, idx)
    for _ in range(iters):
        if np.all(b - a <= tol * b):
            break
        left = fc <= fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        d_new = np.where(left, c, a + g * (b - a))
        c_new = np.where(left, b - g * (b - a), d)
        fnew = device_terms(np.where(left, c_new, d_new), vars, scn, idx)
        fd, fc = np.where(left, fc, fnew), np.where(left, fnew, fd)
        c, d = c_new, d_new
    # the endpoints are candidates too; golden section never evaluates them
    cand = np.column_stack([lo, 0.5 * (a + b), hi])
    best = np.argmin(device_terms(cand, vars, scn, idx), axis=1)
    return cand[np.arange(scn.K), best]


def uwo_solve(scn: Scenario, seed: int = 0, tau: float = 1e-9, max_iter: int = 50) -> SolveReport:
    """Alternate closed-form ``f`` and per-device ``s`` from the random point."""
    t0 = time.perf_counter()
    vars = random_point(scn, seed)
    hist = [objective(vars, scn).Q]
    it = 0
    for it in range(1, max_iter + 1):
        vars = vars.with_(f=optimal_f_step(vars, scn))
        vars = vars.with_(s=optimal_s_step(vars, scn))
        hist.append(objective(vars, scn).Q)
        if abs(hist[-2] - hist[-1]) <= tau * abs(hist[-2]):
            break
    vars = with_auxiliaries(vars, scn)
    rep = _report("uwo", vars, scn, t0, Q_history=hist, true_Q_history=list(hist),
                  iters_bcd=it)
    rep.seed = seed
    return rep


# ---------------------------------------------------------------------------
# RAO

def rao_solve(scn: Scenario, seed: int = 0, settings: SolverSettings | None = None) -> SolveReport:
    """Penalised BCD over ``(A, r)`` only, from the random point, ``f`` and ``s`` held.

    With ``s`` pinned near its latency limit a relaxed row can settle split
    between two full servers; rounding then has to give up resolution. The
    random start is binary and feasible, so it is kept when the BCD result is
    worse (``status`` ``kept_start``).
    """
    t0 = time.perf_counter()
    start = random_point(scn, seed)
    rep = bcd(scn, start, settings, free=("A", "r"), update_f=False, name="rao")
    Q0 = objective(start, scn).Q
    if not (rep.feasible and rep.Q <= Q0):
        kept = finish_report("rao", start, scn, t0, Q_history=rep.Q_history,
                             true_Q_history=rep.true_Q_history, mu_history=rep.mu_history,
                             gap_history=rep.gap_history, stable_from=rep.stable_from,
                             iters_sca=rep.iters_sca, iters_pr=rep.iters_pr,
                             iters_bcd=rep.iters_bcd, gap_before_rounding=rep.gap_before_rounding)
        kept.status = "kept_start"
        rep = kept
    rep.wall_seconds = time.perf_counter() - t0
    rep.seed = seed
    if not is_feasible(rep.vars, scn):
        rep.status = "infeasible"
    return rep
