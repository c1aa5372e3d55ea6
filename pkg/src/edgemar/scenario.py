"""Problem instances and experiment configuration.

Scenarios are drawn from a PCG64 stream seeded by
``SeedSequence(seed, spawn_key=(trial,))``. The draw order is fixed:
``R[0..K)``, then ``l`` row-major (device-major), then ``S[0..N)``, then
``F[0..N)``; every draw is ``Generator.uniform(lo, hi)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .models import ModelCurves, constraint_residuals


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass(frozen=True)
class Scenario:
    K: int
    N: int
    R: np.ndarray          # Mbps, (K,)
    l: np.ndarray          # s, (K, N)
    S: np.ndarray          # TFLOPS, (N,)
    F: np.ndarray          # GHz, (N,)
    lambda1: np.ndarray    # (K,)
    lambda2: np.ndarray    # (K,)
    f_min: float = 2.2
    f_max: float = 3.5
    s_min: float = 256.0 ** 2
    s_max: float = 1024.0 ** 2
    L_max: np.ndarray = None   # s, (K,)
    curves: ModelCurves = field(default_factory=ModelCurves)
    seed: int = 0
    trial: int = 0

    @property
    def s_lower(self) -> float:
        """Effective lower resolution bound: box floor or the accuracy floor."""
        return max(self.s_min, self.curves.accuracy_inverse(self.curves.A_min))

    def replace(self, **kw) -> "Scenario":
        return dataclasses.replace(self, **kw)

    def fingerprint(self) -> bytes:
        parts = [np.asarray(x, dtype=float).tobytes()
                 for x in (self.R, self.l, self.S, self.F, self.lambda1, self.lambda2, self.L_max)]
        return b"".join(parts)


# Default scenario quantities; keys double as config-file keys.
DEFAULTS = {
    "users": 100,
    "servers": 10,
    "seed": 42,
    "lambda1": 10.0,
    "lambda2": 500.0,
    "R_min": 50.0,
    "R_max": 200.0,
    "l_min_ms": 100.0,
    "l_max_ms": 130.0,
    "S_min": 8.0,
    "S_max": 12.0,
    "F_min": 4.4,
    "F_max": 4.6,
    "f_min": 2.2,
    "f_max": 3.5,
    "s_min": 256.0 ** 2,
    "s_max": 1024.0 ** 2,
    "L_max_ms": 250.0,
    "t_pre_ms": 0.4,
    "A_min": 0.6,
    "sigma": 8.0,
    "tau": 0.001,
}

_INT_KEYS = {"users", "servers", "seed", "seeds", "workers"}
_STR_KEYS = {"algorithm", "sweep", "out", "format"}


@dataclass
class ExperimentConfig:
    """Scenario overrides plus run selection.

    ``params`` holds the scenario quantities under the keys of ``DEFAULTS``;
    ``lambda1``/``lambda2`` may also be per-device sequences.
    """

    params: dict = field(default_factory=lambda: dict(DEFAULTS))
    algorithm: str = "leao"
    sweep: str | None = None
    grid: tuple = ()
    seeds: int = 5
    out: str = "out"
    format: str = "csv"
    workers: int = 1
    solver: dict = field(default_factory=dict)

    def __getitem__(self, key):
        return self.params[key]

    def with_params(self, **kw) -> "ExperimentConfig":
        p = dict(self.params)
        for k, v in kw.items():
            if k not in DEFAULTS:
                raise ConfigError(f"unknown scenario key {k!r}")
            p[k] = v
        return dataclasses.replace(self, params=p)

    def validate(self) -> None:
        p = self.params
        if int(p["users"]) < 1 or int(p["servers"]) < 1:
            raise ConfigError("users and servers must be >= 1")
        for lo, hi in (("R_min", "R_max"), ("l_min_ms", "l_max_ms"), ("S_min", "S_max"),
                       ("F_min", "F_max"), ("f_min", "f_max"), ("s_min", "s_max")):
            if not 0 < float(p[lo]) <= float(p[hi]):
                raise ConfigError(f"invalid range {lo}={p[lo]} {hi}={p[hi]}")
        if float(p["L_max_ms"]) <= 0 or float(p["t_pre_ms"]) < 0:
            raise ConfigError("L_max_ms must be positive and t_pre_ms non-negative")
        if not 0 <= float(p["A_min"]) < 1:
            raise ConfigError("A_min must lie in [0, 1)")
        if self.grid:
            g = np.asarray(self.grid, dtype=float)
            if g.size > 1 and not (np.all(np.diff(g) > 0) or np.all(np.diff(g) < 0)):
                raise ConfigError("sweep grid must be strictly monotone")
        if self.seeds < 1:
            raise ConfigError("seeds must be >= 1")


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _STR_KEYS:
        return raw
    if key == "grid":
        return tuple(float(x) for x in raw.replace(",", " ").split())
    if key in _INT_KEYS:
        return int(raw)
    if "," in raw:
        return tuple(float(x) for x in raw.split(","))
    return float(raw)


def load_config(path: str | Path) -> ExperimentConfig:
    """Read a flat ``key = value`` file (``#`` starts a comment)."""
    cfg = ExperimentConfig()
    params = dict(cfg.params)
    solver = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key = value")
        key, raw = (x.strip() for x in line.split("=", 1))
        try:
            val = _parse_value(key, raw)
        except ValueError as exc:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {raw!r}") from exc
        if key in DEFAULTS:
            params[key] = val
        elif key.startswith("solver."):
            solver[key[len("solver."):]] = val
        elif key in {"algorithm", "sweep", "grid", "seeds", "out", "format", "workers"}:
            setattr(cfg, key, val)
        else:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
    cfg.params = params
    cfg.solver = solver
    cfg.validate()
    return cfg


def make_rng(seed: int, trial: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(trial),))))


def _per_device(val, K, name):
    arr = np.asarray(val, dtype=float)
    if arr.ndim == 0:
        return np.full(K, float(arr))
    if arr.shape != (K,):
        raise ConfigError(f"{name} needs a scalar or {K} values")
    return arr.copy()


def generate_scenario(cfg: ExperimentConfig | None = None, seed: int | None = None,
                      trial: int = 0) -> Scenario:
    cfg = cfg or ExperimentConfig()
    cfg.validate()
    p = cfg.params
    seed = int(p["seed"] if seed is None else seed)
    if seed < 0 or seed >= 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    K, N = int(p["users"]), int(p["servers"])
    rng = make_rng(seed, trial)
    R = rng.uniform(p["R_min"], p["R_max"], size=K)
    l = rng.uniform(p["l_min_ms"] * 1e-3, p["l_max_ms"] * 1e-3, size=(K, N))
    S = rng.uniform(p["S_min"], p["S_max"], size=N)
    F = rng.uniform(p["F_min"], p["F_max"], size=N)
    curves = ModelCurves(sigma=float(p["sigma"]), t_pre=float(p["t_pre_ms"]) * 1e-3,
                         A_min=float(p["A_min"]))
    return Scenario(
        K=K, N=N, R=R, l=l, S=S, F=F,
        lambda1=_per_device(p["lambda1"], K, "lambda1"),
        lambda2=_per_device(p["lambda2"], K, "lambda2"),
        f_min=float(p["f_min"]), f_max=float(p["f_max"]),
        s_min=float(p["s_min"]), s_max=float(p["s_max"]),
        L_max=np.full(K, float(p["L_max_ms"]) * 1e-3),
        curves=curves, seed=seed, trial=int(trial),
    )


@dataclass
class FeasibilityReport:
    feasible: bool
    canonical_feasible: bool
    slack: dict
    method: str

    def __str__(self) -> str:
        worst = ", ".join(f"{k}={v:+.3g}" for k, v in self.slack.items())
        return f"{'feasible' if self.feasible else 'INFEASIBLE'} ({self.method}; slack {worst})"


def canonical_point(scn: Scenario):
    """``f_min``, ``s_min``, nearest-server assignment, equal split of each server."""
    from .models import DecisionVars

    idx = np.argmin(scn.l, axis=1)  # argmin takes the lowest index on ties
    A = np.zeros((scn.K, scn.N))
    A[np.arange(scn.K), idx] = 1.0
    counts = A.sum(axis=0)
    r = scn.S[idx] / counts[idx]
    return DecisionVars(f=np.full(scn.K, scn.f_min), s=np.full(scn.K, scn.s_lower), A_hat=A, r=r)


def validate_feasibility(scn: Scenario, tol: float = 1e-9) -> FeasibilityReport:
    """Check the canonical start point; fall back to a capacity-aware assignment.

    Slack is reported as ``-residual`` per constraint family (negative means
    violated) at whichever point decided the status.
    """
    from .solver_core import capacity_aware_point

    vars = canonical_point(scn)
    res = constraint_residuals(vars, scn)
    ok = all(v <= tol for v in res.values())
    if ok:
        return FeasibilityReport(True, True, {k: -v for k, v in res.items()}, "nearest-server")
    alt = capacity_aware_point(scn)
    if alt is not None:
        res2 = constraint_residuals(alt, scn)
        if all(v <= tol for v in res2.values()):
            return FeasibilityReport(True, False, {k: -v for k, v in res2.items()}, "capacity-aware")
    return FeasibilityReport(False, False, {k: -v for k, v in res.items()}, "nearest-server")
