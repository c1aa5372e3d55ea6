"""Command-line runner: single solves, parameter sweeps and plot data.

Exit status is 0 on success, 1 when a solve fails and 2 on usage errors.
Sweep CSVs hold only deterministic columns; wall-clock times go to a
separate ``*_timing.csv`` so repeated runs give byte-identical results.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .baselines import baseline_solve, rao_solve, uwo_solve
from .leao import leao_solve
from .models import objective
from .oracle import OracleSizeError, brute_force_solve
from .scenario import ConfigError, ExperimentConfig, generate_scenario, load_config
from .solver_core import ConvexSolveError, InfeasibleScenarioError, SolverSettings

ALGORITHMS = ("leao", "baseline", "uwo", "rao", "oracle")
SWEEP_ALGORITHMS = ("leao", "rao", "uwo", "baseline")
COLUMNS = ("algorithm", "sweep_param", "param_value", "seed", "Q", "mean_accuracy",
           "mean_latency_s", "mean_device_energy_J", "mean_server_energy_J",
           "iters_sca", "iters_pr", "iters_bcd", "status")
OK_STATUS = ("ok", "kept_start")

# canned grids: users and servers as listed, lambda2 for lambda1 = 10
SWEEP_GRIDS = {
    "lambda": tuple(float(x) for x in np.geomspace(10.0, 1000.0, 6)),
    "users": (25, 50, 100, 150, 200),
    "servers": (2, 5, 10, 15, 20),
}
SWEEP_PARAM = {"lambda": "lambda2_over_lambda1", "users": "K", "servers": "N"}

SOLVE_ERRORS = (InfeasibleScenarioError, ConvexSolveError, FloatingPointError, ValueError)


class UsageError(Exception):
    pass


def settings_from(cfg: ExperimentConfig) -> SolverSettings:
    st = SolverSettings()
    # the scenario-level tau is the convergence tolerance; solver.tau wins
    kw = {"tau": float(cfg.params.get("tau", st.tau))}
    for k, v in cfg.solver.items():
        if not hasattr(st, k):
            raise ConfigError(f"unknown solver setting {k!r}")
        cur = getattr(st, k)
        kw[k] = int(v) if isinstance(cur, int) and not isinstance(cur, bool) else v
    return st.replace(**kw)


# ---------------------------------------------------------------------------
# single runs

@dataclass
class Row:
    algorithm: str
    sweep_param: str
    param_value: float | str
    seed: int
    Q: float = float("nan")
    mean_accuracy: float = float("nan")
    mean_latency_s: float = float("nan")
    mean_device_energy_J: float = float("nan")
    mean_server_energy_J: float = float("nan")
    iters_sca: int = 0
    iters_pr: int = 0
    iters_bcd: int = 0
    status: str = "ok"
    wall_seconds: float = 0.0

    def cells(self) -> list[str]:
        def num(x):
            return "nan" if isinstance(x, float) and not np.isfinite(x) else f"{x:.10g}"

        pv = self.param_value if isinstance(self.param_value, str) else num(float(self.param_value))
        return [self.algorithm, self.sweep_param, pv, str(self.seed), num(self.Q),
                num(self.mean_accuracy), num(self.mean_latency_s), num(self.mean_device_energy_J),
                num(self.mean_server_energy_J), str(self.iters_sca), str(self.iters_pr),
                str(self.iters_bcd), self.status]


def solve(algorithm: str, scn, seed: int, settings: SolverSettings | None = None):
    """Dispatch to one algorithm; returns a ``SolveReport`` or an ``OracleResult``."""
    if algorithm == "leao":
        return leao_solve(scn, settings)
    if algorithm == "baseline":
        return baseline_solve(scn, seed)
    if algorithm == "uwo":
        return uwo_solve(scn, seed)
    if algorithm == "rao":
        return rao_solve(scn, seed, settings)
    if algorithm == "oracle":
        return brute_force_solve(scn)
    raise UsageError(f"unknown algorithm {algorithm!r}")


def result_row(algorithm, result, scn, sweep_param="none", param_value="", seed=0) -> Row:
    b = objective(result.vars, scn)
    row = Row(algorithm, sweep_param, param_value, seed, Q=float(result.Q),
              mean_accuracy=b.mean_accuracy, mean_latency_s=b.mean_latency,
              mean_device_energy_J=b.mean_device_energy,
              mean_server_energy_J=b.mean_server_energy)
    if algorithm != "oracle":
        row.iters_sca, row.iters_pr, row.iters_bcd = result.iters_sca, result.iters_pr, result.iters_bcd
        row.status = result.status
        row.wall_seconds = result.wall_seconds
    return row


def run_single(cfg: ExperimentConfig, seed: int | None = None):
    """Generate the scenario, run ``cfg.algorithm``; returns ``(result, breakdown, scenario)``."""
    if cfg.algorithm not in ALGORITHMS:
        raise UsageError(f"unknown algorithm {cfg.algorithm!r}")
    seed = int(cfg["seed"] if seed is None else seed)
    scn = generate_scenario(cfg, seed=seed)
    result = solve(cfg.algorithm, scn, seed, settings_from(cfg))
    return result, objective(result.vars, scn), scn


# ---------------------------------------------------------------------------
# sweeps

@dataclass
class SweepResult:
    sweep: str
    rows: list = field(default_factory=list)

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(COLUMNS)
        for r in self.rows:
            w.writerow(r.cells())
        return buf.getvalue()

    def timing_text(self) -> str:
        lines = ["algorithm,param_value,seed,wall_seconds"]
        lines += [f"{r.algorithm},{r.cells()[2]},{r.seed},{r.wall_seconds:.3f}" for r in self.rows]
        return "\n".join(lines) + "\n"


def sweep_tasks(cfg: ExperimentConfig, algorithms=None):
    if cfg.sweep not in SWEEP_GRIDS:
        raise UsageError(f"unknown sweep {cfg.sweep!r}; expected one of {tuple(SWEEP_GRIDS)}")
    grid = cfg.grid or SWEEP_GRIDS[cfg.sweep]
    algos = algorithms or SWEEP_ALGORITHMS
    base = int(cfg["seed"])
    tasks = []
    for value in grid:
        if cfg.sweep == "lambda":
            sub = cfg.with_params(lambda1=10.0, lambda2=float(value))
            shown = float(value) / 10.0
        elif cfg.sweep == "users":
            sub, shown = cfg.with_params(users=int(value)), int(value)
        else:
            sub, shown = cfg.with_params(servers=int(value)), int(value)
        for i in range(cfg.seeds):
            for a in algos:
                tasks.append((a, sub, shown, base + i))
    return tasks


def _run_task(task) -> Row:
    algorithm, cfg, shown, seed = task
    param = SWEEP_PARAM[cfg.sweep]
    try:
        scn = generate_scenario(cfg, seed=seed)
        res = solve(algorithm, scn, seed, settings_from(cfg))
        return result_row(algorithm, res, scn, param, shown, seed)
    except SOLVE_ERRORS as exc:
        return Row(algorithm, param, shown, seed, status=f"error:{type(exc).__name__}")


def _order(row: Row):
    algo = SWEEP_ALGORITHMS.index(row.algorithm) if row.algorithm in SWEEP_ALGORITHMS else 99
    return (float(row.param_value), row.seed, algo)


def run_sweep(cfg: ExperimentConfig, algorithms=None, workers: int | None = None) -> SweepResult:
    """Every (grid point, seed, algorithm); failures become rows with an error status."""
    tasks = sweep_tasks(cfg, algorithms)
    workers = cfg.workers if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            rows = list(ex.map(_run_task, tasks))
    else:
        rows = [_run_task(t) for t in tasks]
    return SweepResult(cfg.sweep, sorted(rows, key=_order))


# ---------------------------------------------------------------------------
# plot data

PANELS = {
    "lambda2_over_lambda1": (("fig2a_optimality_vs_ratio", "Q"),
                             ("fig2b_accuracy_vs_ratio", "mean_accuracy")),
    "K": (("fig2c_optimality_vs_users", "Q"),),
    "N": (("fig2d_optimality_vs_servers", "Q"),),
}


def read_sweep_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        rd = csv.DictReader(fh)
        missing = [c for c in COLUMNS if c not in (rd.fieldnames or [])]
        if missing:
            raise ValueError(f"{path}: missing columns {missing}")
        return list(rd)


def panel_means(rows: list[dict], column: str):
    """``(xs, algorithms, table)`` of per-x means over successful seeds."""
    ok = [r for r in rows if r["status"] in OK_STATUS]
    xs = sorted({float(r["param_value"]) for r in ok})
    algos = [a for a in SWEEP_ALGORITHMS + ("oracle",) if any(r["algorithm"] == a for r in ok)]
    table = np.full((len(xs), len(algos)), np.nan)
    for i, x in enumerate(xs):
        for j, a in enumerate(algos):
            vals = [float(r[column]) for r in ok if r["algorithm"] == a and float(r["param_value"]) == x]
            if vals:
                table[i, j] = float(np.mean(vals))
    return xs, algos, table


def emit_plot_data(sweep_files, out_dir) -> list[Path]:
    """One whitespace-delimited file per panel: x column, then one mean column per algorithm."""
    out_dir = Path(out_dir)
    rows = []
    for p in ([sweep_files] if isinstance(sweep_files, (str, Path)) else sweep_files):
        rows += read_sweep_csv(p)
    if not rows:
        raise ValueError("empty sweep: nothing to plot")
    params = sorted({r["sweep_param"] for r in rows})
    written = []
    for param in params:
        if param not in PANELS:
            raise ValueError(f"no plot panels for sweep parameter {param!r}")
        sub = [r for r in rows if r["sweep_param"] == param]
        for name, column in PANELS[param]:
            xs, algos, table = panel_means(sub, column)
            if not xs:
                raise ValueError(f"no successful rows for {param}")
            out_dir.mkdir(parents=True, exist_ok=True)
            path = out_dir / f"{name}.dat"
            lines = ["# " + " ".join([param] + algos)]
            for x, vals in zip(xs, table):
                lines.append(" ".join([f"{x:.10g}"] + [f"{v:.12g}" for v in vals]))
            path.write_text("\n".join(lines) + "\n")
            written.append(path)
    return written


# ---------------------------------------------------------------------------
# CLI

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="edgemar", description=__doc__.splitlines()[0])
    p.add_argument("--config", metavar="PATH", help="key = value configuration file")
    p.add_argument("--users", type=int, metavar="K")
    p.add_argument("--servers", type=int, metavar="N")
    p.add_argument("--seed", type=int, metavar="U64")
    p.add_argument("--lambda1", type=float, metavar="F")
    p.add_argument("--lambda2", type=float, metavar="F")
    p.add_argument("--algorithm", choices=ALGORITHMS,
                   help="single run (default leao); restricts a sweep to one algorithm")
    p.add_argument("--sweep", choices=tuple(SWEEP_GRIDS))
    p.add_argument("--seeds", type=int, help="seeds per grid point (default 5)")
    p.add_argument("--grid", help="comma-separated sweep grid overriding the canned one")
    p.add_argument("--workers", type=int, help="worker processes for sweeps")
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--format", choices=("csv", "report"))
    p.add_argument("--plot-data", action="store_true", help="also write per-panel data files")
    return p


def config_from_args(args) -> tuple[ExperimentConfig, bool]:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    over = {k: getattr(args, k) for k in ("users", "servers", "seed", "lambda1", "lambda2")
            if getattr(args, k) is not None}
    cfg = cfg.with_params(**over)
    explicit_algo = args.algorithm is not None
    kw = {}
    for k in ("algorithm", "sweep", "seeds", "out", "format", "workers"):
        v = getattr(args, k)
        if v is not None:
            kw[k] = v
    if args.grid:
        try:
            kw["grid"] = tuple(float(x) for x in args.grid.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad --grid {args.grid!r}") from exc
    cfg = dataclasses.replace(cfg, **kw)
    cfg.validate()
    return cfg, explicit_algo


def _single_name(cfg: ExperimentConfig, seed: int) -> str:
    return f"{cfg.algorithm}_K{int(cfg['users'])}_N{int(cfg['servers'])}_seed{seed}"


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg, explicit_algo = config_from_args(args)
        if cfg.algorithm not in ALGORITHMS:
            raise UsageError(f"unknown algorithm {cfg.algorithm!r}")
    except (ConfigError, UsageError, OSError) as exc:
        print(f"edgemar: error: {exc}", file=sys.stderr)
        return 2
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)

    if cfg.sweep:
        algos = (cfg.algorithm,) if explicit_algo else None
        try:
            res = run_sweep(cfg, algos)
        except UsageError as exc:
            print(f"edgemar: error: {exc}", file=sys.stderr)
            return 2
        path = out / f"sweep_{cfg.sweep}.csv"
        path.write_text(res.csv_text())
        (out / f"sweep_{cfg.sweep}_timing.csv").write_text(res.timing_text())
        if args.plot_data:
            try:
                emit_plot_data(path, out)
            except ValueError as exc:
                print(f"edgemar: plot data: {exc}", file=sys.stderr)
        n_bad = sum(r.status not in OK_STATUS for r in res.rows)
        if n_bad:
            print(f"edgemar: {n_bad} of {len(res.rows)} runs failed", file=sys.stderr)
        print(path)
        return 1 if n_bad == len(res.rows) else 0

    seed = int(cfg["seed"])
    try:
        result, _, scn = run_single(cfg, seed)
    except OracleSizeError as exc:
        print(f"edgemar: error: {exc}", file=sys.stderr)
        return 2
    except SOLVE_ERRORS as exc:
        print(f"edgemar: solve failed: {exc}", file=sys.stderr)
        return 1
    name = _single_name(cfg, seed)
    if cfg.format == "report":
        path = out / f"{name}.report"
        text = result.to_text() if cfg.algorithm == "oracle" else result.to_text(timing=False)
        path.write_text(text)
    else:
        path = out / f"{name}.csv"
        res = SweepResult("none", [result_row(cfg.algorithm, result, scn, seed=seed)])
        path.write_text(res.csv_text())
    print(path)
    status = "ok" if cfg.algorithm == "oracle" else result.status
    return 0 if status in OK_STATUS else 1


if __name__ == "__main__":
    sys.exit(main())
