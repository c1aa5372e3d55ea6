import numpy as np
import pytest

from edgemar.baselines import (
    BaselineSpec, baseline_solve, device_terms, optimal_s_step, random_point, rao_solve,
    truncated_gaussian, uwo_solve,
)
from edgemar.oracle import verify_constraints

from conftest import scenario


@pytest.fixture(scope="module")
def scn():
    return scenario(12, 3, seed=4)


def test_algorithm_tag_validation():
    with pytest.raises(ValueError):
        BaselineSpec("greedy")
    assert BaselineSpec("uwo", 1).algorithm == "uwo"


def test_truncated_gaussian_box():
    rng = np.random.default_rng(0)
    x = truncated_gaussian(rng, 2.2, 3.5, 10000)
    assert x.min() >= 2.2 and x.max() <= 3.5
    assert abs(x.mean() - 2.85) < 0.01


def test_random_point_deterministic_and_feasible(scn):
    a, b = random_point(scn, 3), random_point(scn, 3)
    np.testing.assert_array_equal(a.s, b.s)
    np.testing.assert_array_equal(a.A_hat, b.A_hat)
    assert not np.array_equal(random_point(scn, 4).f, a.f)
    assert verify_constraints(a, scn).ok
    # equal split of every used server
    idx = np.argmax(a.A_hat, 1)
    for n in set(idx):
        assert np.allclose(a.r[idx == n], scn.S[n] / np.sum(idx == n))


def test_baseline_same_seed_same_Q(scn):
    assert baseline_solve(scn, 2).Q == baseline_solve(scn, 2).Q


def test_uwo_improves_on_baseline(scn):
    for seed in range(3):
        b, u = baseline_solve(scn, seed), uwo_solve(scn, seed)
        assert u.Q <= b.Q + 1e-12
        assert np.all((u.vars.f >= 2.2) & (u.vars.f <= 3.5))
        assert verify_constraints(u.vars, scn).ok
        np.testing.assert_array_equal(u.vars.A_hat, b.vars.A_hat)
        np.testing.assert_array_equal(u.vars.r, b.vars.r)


def test_uwo_s_step_matches_grid(scn):
    v = random_point(scn, 1)
    s = optimal_s_step(v, scn)
    idx = np.argmax(v.A_hat, 1)
    from edgemar.solver_core import max_resolution

    hi = max_resolution(scn, v.r, idx)
    for k in range(scn.K):
        grid = np.geomspace(scn.s_lower, hi[k], 2000)
        vals = device_terms(np.broadcast_to(grid, (scn.K, grid.size)), v, scn, idx)[k]
        g = grid[np.argmin(vals)]
        assert abs(s[k] - g) <= 1e-2 * g
        mine = device_terms(np.where(np.arange(scn.K) == k, s[k], v.s), v, scn, idx)[k]
        assert mine <= vals.min() + 1e-12


def test_rao_descends_and_is_binary(scn):
    for seed in range(3):
        b, r = baseline_solve(scn, seed), rao_solve(scn, seed)
        assert r.Q <= b.Q + 1e-12
        assert verify_constraints(r.vars, scn).ok
        assert np.all(np.isin(r.vars.A_hat, (0.0, 1.0)))
        np.testing.assert_array_equal(r.vars.f, b.vars.f)


def test_random_point_repair_leaves_headroom():
    # a device that only just fits at the resolution floor must not be kept
    # where the lowered resolution step cannot place it
    scn = scenario(100, 10, 51)
    v = random_point(scn, 51)
    assert np.all(np.isfinite(v.s))
    assert verify_constraints(v, scn).ok
