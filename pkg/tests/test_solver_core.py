import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgemar.models import ModelCurves, constraint_residuals
from edgemar.solver_core import (
    ConvexSolveError, ConvexSubproblem, InfeasibleScenarioError, initial_feasible_point,
    is_feasible, minimize_frequency, optimal_f_step, solve_convex,
)

from conftest import make_scenario, point, scenario

CV = ModelCurves()


def quad(H, g):
    return lambda x: (0.5 * x @ H @ x + g @ x, H @ x + g, H)


def test_active_constraint_1d():
    prob = ConvexSubproblem(quad(np.array([[2.0]]), np.array([-6.0])),
                            [lambda x: (x[0] - 2.0, np.array([1.0]), np.zeros((1, 1)))], dim=1)
    res = solve_convex(prob, np.array([0.0]))
    assert res.x[0] == pytest.approx(2.0, abs=1e-6)
    assert res.x[0] < 2.0


def test_unconstrained_quadratic():
    rng = np.random.default_rng(1)
    M = rng.normal(size=(5, 5))
    H = M @ M.T + 5 * np.eye(5)
    g = rng.normal(size=5)
    res = solve_convex(ConvexSubproblem(quad(H, g), [], dim=5), np.zeros(5))
    np.testing.assert_allclose(res.x, np.linalg.solve(H, -g), atol=1e-8)


def test_simplex_equality():
    c = np.array([1.0, 2.5, 0.5, 3.0])  # non-degenerate: every active bound has a positive multiplier
    obj = lambda x: (float(np.sum((x - c) ** 2)), 2 * (x - c), 2 * np.eye(4))
    cons = [lambda x, i=i: (-x[i], -np.eye(4)[i], np.zeros((4, 4))) for i in range(4)]
    prob = ConvexSubproblem(obj, cons, A_eq=np.ones((1, 4)), b_eq=np.array([1.0]), dim=4)
    res = solve_convex(prob, np.full(4, 0.25))
    # projection of c onto the simplex
    u = np.sort(c)[::-1]
    k = np.max(np.flatnonzero(u - (np.cumsum(u) - 1) / np.arange(1, 5) > 0)) + 1
    tau = (np.sum(u[:k]) - 1) / k
    np.testing.assert_allclose(res.x, np.maximum(c - tau, 0), atol=1e-6)
    assert res.x.sum() == pytest.approx(1.0, abs=1e-9)


def test_infeasible_start_raises():
    prob = ConvexSubproblem(quad(np.eye(1), np.zeros(1)),
                            [lambda x: (x[0] - 1.0, np.array([1.0]), np.zeros((1, 1)))], dim=1)
    with pytest.raises(ConvexSolveError):
        solve_convex(prob, np.array([2.0]))


def test_never_worse_than_start():
    prob = ConvexSubproblem(quad(np.eye(2), np.zeros(2)), [], dim=2)
    res = solve_convex(prob, np.zeros(2))
    assert res.value <= res.start_value


def _grid_f(L, t_pre, lo=2.2, hi=3.5):
    f = np.arange(lo, hi + 5e-5, 1e-4)
    g = t_pre * CV.power_pre(f) + CV.power_bs(f) * L
    return f[np.argmin(g)]


@pytest.mark.parametrize("L, t_pre, expected", [(0.215, 4e-4, 2.2), (0.215, 1.0, 3.5), (0.0, 4e-4, 3.5)])
def test_f_step_cases(L, t_pre, expected):
    f = minimize_frequency(np.array([L]), t_pre, CV, 2.2, 3.5)[0]
    assert f == pytest.approx(expected, abs=1e-12)
    assert abs(f - _grid_f(L, t_pre)) <= 1e-3


def test_f_step_contrived_stationary_points():
    # the derivative vanishes near 0.946 and 2.823 when t_pre = 1
    d = np.polyder(CV.p_pre)
    d = d.copy()
    d[-1] += CV.p_bs[0] * 0.215
    roots = np.sort(np.roots(d).real)
    np.testing.assert_allclose(roots, [0.946, 2.823], atol=2e-3)
    assert minimize_frequency(np.array([0.215]), 1.0, CV, 2.2, 3.5)[0] == 3.5


@settings(max_examples=100, deadline=None)
@given(L=st.floats(0.0, 0.5), t_pre=st.floats(1e-5, 2.0))
def test_f_step_matches_grid(L, t_pre):
    f = minimize_frequency(np.array([L]), t_pre, CV, 2.2, 3.5)[0]
    g = lambda x: t_pre * CV.power_pre(x) + CV.power_bs(x) * L
    assert 2.2 <= f <= 3.5
    assert g(f) <= g(_grid_f(L, t_pre)) + 1e-12


def test_optimal_f_step_vector(one_device):
    scn, v = one_device
    assert optimal_f_step(v, scn)[0] == pytest.approx(2.2)


def test_initial_point_argmin():
    scn = make_scenario(K=1, N=2, l=[[0.12, 0.10]], S=[10.0, 9.0])
    v = initial_feasible_point(scn)
    assert np.argmax(v.A_hat[0]) == 1
    assert v.r[0] == pytest.approx(9.0)


def test_initial_point_default_feasible():
    scn = scenario(100, 10, seed=42)
    v = initial_feasible_point(scn)
    res = constraint_residuals(v, scn)
    assert is_feasible(v, scn) and res["C5"] == 0.0


def test_initial_point_infeasible():
    with pytest.raises(InfeasibleScenarioError):
        initial_feasible_point(make_scenario(L_max=0.05))
