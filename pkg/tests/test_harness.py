import csv
import dataclasses

import numpy as np
import pytest

from edgemar import harness
from edgemar.harness import COLUMNS, emit_plot_data, main, run_sweep, settings_from
from edgemar.scenario import ExperimentConfig


def test_cli_leao_smoke(tmp_path, capsys):
    rc = main(["--algorithm", "leao", "--users", "10", "--servers", "3", "--seed", "1",
               "--out", str(tmp_path), "--format", "report"])
    assert rc == 0
    text = (tmp_path / "leao_K10_N3_seed1.report").read_text()
    assert "status = ok" in text


def test_cli_oracle_smoke(tmp_path):
    assert main(["--algorithm", "oracle", "--users", "3", "--servers", "2", "--out", str(tmp_path),
                 "--format", "report"]) == 0
    assert "grid_slack" in (tmp_path / "oracle_K3_N2_seed42.report").read_text()


def test_cli_usage_errors(tmp_path, capsys):
    assert main(["--algorithm", "nope"]) == 2
    assert "invalid choice" in capsys.readouterr().err
    assert main(["--algorithm", "oracle", "--users", "9", "--out", str(tmp_path)]) == 2
    bad = tmp_path / "bad.cfg"
    bad.write_text("users = 0\n")
    assert main(["--config", str(bad), "--out", str(tmp_path)]) == 2


def test_cli_solve_failure(tmp_path, capsys):
    cfg = tmp_path / "tight.cfg"
    cfg.write_text("L_max_ms = 50\n")
    assert main(["--config", str(cfg), "--users", "4", "--servers", "2", "--out", str(tmp_path)]) == 1
    assert "solve failed" in capsys.readouterr().err


def test_csv_schema(tmp_path):
    main(["--algorithm", "baseline", "--users", "6", "--servers", "2", "--out", str(tmp_path)])
    lines = (tmp_path / "baseline_K6_N2_seed42.csv").read_text().splitlines()
    assert lines[0] == ",".join(COLUMNS)
    assert lines[0] == ("algorithm,sweep_param,param_value,seed,Q,mean_accuracy,mean_latency_s,"
                        "mean_device_energy_J,mean_server_energy_J,iters_sca,iters_pr,iters_bcd,status")
    assert len(lines) == 2


def _small_sweep(sweep, grid, algos=("leao", "baseline")):
    cfg = ExperimentConfig(sweep=sweep, grid=grid, seeds=2).with_params(users=6, servers=2)
    return run_sweep(cfg, algos)


def test_sweep_rows_and_determinism(tmp_path):
    a = _small_sweep("lambda", (100.0, 1000.0))
    b = _small_sweep("lambda", (100.0, 1000.0))
    assert a.csv_text() == b.csv_text()
    assert len(a.rows) == 2 * 2 * 2
    assert {r.param_value for r in a.rows} == {10.0, 100.0}


def test_sweep_records_failures():
    res = _small_sweep("servers", (1, 2), algos=("baseline",))
    status = {(r.param_value, r.seed): r.status for r in res.rows}
    assert len(status) == 4
    assert all(s in ("ok", "kept_start") or s.startswith("error:") for s in status.values())


def test_sweep_workers_match_serial():
    cfg = ExperimentConfig(sweep="users", grid=(4, 6), seeds=1).with_params(servers=2)
    assert run_sweep(cfg, ("uwo",), workers=2).csv_text() == run_sweep(cfg, ("uwo",), workers=1).csv_text()


def test_plot_data(tmp_path):
    res = _small_sweep("lambda", (100.0, 1000.0))
    path = tmp_path / "sweep.csv"
    path.write_text(res.csv_text())
    files = emit_plot_data(path, tmp_path / "plots")
    assert sorted(f.name for f in files) == ["fig2a_optimality_vs_ratio.dat", "fig2b_accuracy_vs_ratio.dat"]
    data = np.loadtxt(files[0])
    rows = list(csv.DictReader(open(path)))
    for x, *means in data:
        for j, algo in enumerate(("leao", "baseline")):
            vals = [float(r["Q"]) for r in rows if r["algorithm"] == algo and float(r["param_value"]) == x]
            assert means[j] == pytest.approx(np.mean(vals), rel=1e-12)


def test_plot_data_errors(tmp_path):
    empty = tmp_path / "empty.csv"
    empty.write_text(",".join(COLUMNS) + "\n")
    with pytest.raises(ValueError):
        emit_plot_data(empty, tmp_path / "out")
    assert not (tmp_path / "out").exists()
    broken = tmp_path / "broken.csv"
    broken.write_text("algorithm,Q\nleao,1\n")
    with pytest.raises(ValueError):
        emit_plot_data(broken, tmp_path / "out")


def test_sweep_cli_writes_timing_separately(tmp_path):
    rc = main(["--sweep", "users", "--grid", "4,5", "--seeds", "1", "--servers", "2",
               "--algorithm", "baseline", "--out", str(tmp_path), "--plot-data"])
    assert rc == 0
    assert "wall" not in (tmp_path / "sweep_users.csv").read_text()
    assert "wall_seconds" in (tmp_path / "sweep_users_timing.csv").read_text()
    assert (tmp_path / "fig2c_optimality_vs_users.dat").exists()


def test_settings_take_tau_from_config():
    cfg = ExperimentConfig().with_params(tau=1e-4)
    assert settings_from(cfg).tau == 1e-4
    cfg = dataclasses.replace(cfg, solver={"tau": 1e-5})
    assert settings_from(cfg).tau == 1e-5
