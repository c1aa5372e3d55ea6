import numpy as np
import pytest

from edgemar.leao import leao_solve
from edgemar.models import objective
from edgemar.oracle import OracleSizeError, brute_force_solve, verify_constraints
from edgemar.solver_core import initial_feasible_point

from conftest import make_scenario, scenario


def test_one_device_beats_hand_point():
    scn = make_scenario(lambda2=500.0)
    res = brute_force_solve(scn)
    assert res.n_assignments == 1
    assert verify_constraints(res.vars, scn).ok
    assert res.Q <= objective(initial_feasible_point(scn), scn).Q


def test_order_independent():
    scn = scenario(2, 2, seed=3)
    a = brute_force_solve(scn, order="lex")
    b = brute_force_solve(scn, order="reverse")
    assert a.assignment == b.assignment
    assert a.Q == b.Q


def test_refinement_never_worse():
    scn = scenario(3, 2, seed=11)
    qs = [brute_force_solve(scn, rounds=k).Q for k in range(4)]
    assert all(b <= a + 1e-12 for a, b in zip(qs, qs[1:]))
    res = brute_force_solve(scn, rounds=2)
    assert np.all(np.diff(res.Q_rounds) <= 0)
    assert res.grid_slack >= 0


def test_workers_same_result():
    scn = scenario(3, 2, seed=5)
    assert brute_force_solve(scn, workers=2).Q == brute_force_solve(scn).Q


def test_size_limits():
    with pytest.raises(OracleSizeError):
        brute_force_solve(scenario(5, 2))
    with pytest.raises(ValueError):
        brute_force_solve(scenario(2, 2), grid=10)


def test_leao_close_to_oracle():
    scn = scenario(3, 2, seed=0)
    o, l = brute_force_solve(scn), leao_solve(scn)
    assert l.Q <= o.Q + 0.10 * abs(o.Q)
    assert l.Q >= o.Q - o.grid_slack - 1e-6 * abs(o.Q)


def test_verify_constraints_failures():
    scn = scenario(4, 2, seed=0)
    v = initial_feasible_point(scn)
    assert verify_constraints(v, scn).ok
    rep = verify_constraints(v.with_(r=2 * v.r), scn)
    assert not rep.passed["C7"] and rep.residuals["C7"] > 0
    rep = verify_constraints(v.with_(s=np.full(4, scn.s_min - 1.0)), scn)
    assert not rep.passed["C4"]
    assert "FAIL" in str(rep)
    frac = v.with_(A_hat=np.full((4, 2), 0.5))
    assert not verify_constraints(frac, scn).passed["C5"]
