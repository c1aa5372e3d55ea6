import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from edgemar.models import (
    ModelCurves, ModelDomainError, accuracy, capacity_surrogate, dc_product_bound,
    device_energy, latency_components, objective, objective_surrogate, optimal_u, optimal_w,
    pair_energy_amgm, optimal_v, replaced_processing_latency, server_energy, server_term,
    constraint_residuals,
)
from edgemar.leao import with_auxiliaries

from conftest import make_scenario, point, scenario

CV = ModelCurves()


def test_latency_components(one_device):
    scn, v = one_device
    L_t, L_cn, L_p, L = latency_components(0, v, scn)
    assert L_t == pytest.approx(5.24288e-3, rel=1e-12)
    assert L_cn == pytest.approx(0.115, rel=1e-12)
    assert L_p == pytest.approx(0.094744, abs=5e-7)
    assert L == pytest.approx(L_t + L_cn + L_p, rel=1e-15)


def test_latency_rejects_bad_domain(one_device):
    scn, v = one_device
    with pytest.raises(ModelDomainError):
        latency_components(0, v.with_(s=np.array([0.0])), scn)
    with pytest.raises(ModelDomainError):
        latency_components(0, v.with_(r=np.array([-1.0])), scn)


@pytest.mark.parametrize("s, expected", [(65536, 0.70116), (1048576, 0.99797)])
def test_accuracy_values(s, expected):
    assert accuracy(s) == pytest.approx(expected, abs=5e-6)


def test_accuracy_domain():
    with pytest.raises(ModelDomainError):
        accuracy(0.0)


def test_device_energy(one_device):
    scn, v = one_device
    E_img, E_com, E_bs, E_k = device_energy(0, v, scn)
    assert CV.power_pre(3.0) == pytest.approx(0.05438, abs=5e-6)
    assert E_img == pytest.approx(2.175e-5, rel=1e-3)
    assert E_com == pytest.approx(0.013107, rel=1e-4)
    assert CV.power_bs(3.0) == pytest.approx(0.827)
    assert E_bs == pytest.approx(0.177794, rel=1e-5)
    assert E_k == pytest.approx(0.190923, rel=1e-5)


def test_device_energy_frequency_sanity(one_device):
    scn, v = one_device
    with pytest.raises(ModelDomainError):
        device_energy(0, v.with_(f=np.array([20.0])), scn)


def test_server_energy_single_and_additive():
    scn = make_scenario()
    e1 = server_energy(0, point(), scn)
    assert e1 == pytest.approx(0.336808 * 0.094744, rel=1e-5)
    scn2 = make_scenario(K=2, N=2)
    v2 = point(K=2, N=2, idx=[0, 0])
    assert server_energy(0, v2, scn2) == pytest.approx(2 * e1, rel=1e-14)
    assert server_energy(1, v2, scn2) == 0.0


def test_objective_one_device(one_device):
    scn, v = one_device
    b = objective(v, scn)
    assert b.Q == pytest.approx(-67.743, abs=2e-3)
    assert b.Q == pytest.approx(b.recompose(), rel=1e-15)


def test_objective_zero_weights():
    scn = make_scenario(K=2, N=2, lambda1=0.0, lambda2=0.0, l=[[0.11, 0.12], [0.12, 0.1]])
    v = point(K=2, N=2, idx=[0, 1])
    b = objective(v, scn)
    assert b.Q == pytest.approx(b.E_n.mean() + b.E_k.mean(), rel=1e-14)


def test_replaced_latency_examples():
    w = optimal_w(65536.0, 1.0, CV)
    assert w == pytest.approx(5.27738, rel=1e-5)
    assert replaced_processing_latency(65536.0, 1.0, w) == pytest.approx(CV.complexity(65536.0), rel=1e-14)
    assert replaced_processing_latency(65536.0, 1.0, 10.0) == pytest.approx(0.114765, abs=1e-6)
    with pytest.raises(ModelDomainError):
        replaced_processing_latency(65536.0, 1.0, 0.0)


pos = st.floats(1e-3, 1e3)


@settings(max_examples=200, deadline=None)
@given(s=st.floats(256.0 ** 2, 1024.0 ** 2), r=st.floats(0.05, 12.0), w=pos)
def test_replaced_latency_majorises(s, r, w):
    assert replaced_processing_latency(s, r, w) >= CV.complexity(s) / r * (1 - 1e-12)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(1e-3, 1.0), y=pos, v=pos)
def test_amgm_pair_bound(a, y, v):
    assert pair_energy_amgm(a, y, v) >= a * y * (1 - 1e-12)
    assert pair_energy_amgm(a, y, optimal_v(a, y)) == pytest.approx(a * y, rel=1e-12)


@settings(max_examples=200, deadline=None)
@given(a=st.floats(0.0, 1.0), y=pos, a_e=st.floats(1e-3, 1.0), y_e=pos)
def test_dc_bound_majorises_and_touches(a, y, a_e, y_e):
    g = np.sqrt(y_e)
    assert dc_product_bound(a, y, a_e, y_e, g) >= a * y - 1e-9 * (1 + a * y)
    assert dc_product_bound(a_e, y_e, a_e, y_e, g) == pytest.approx(a_e * y_e, rel=1e-12)


def test_capacity_surrogate_example():
    A = np.array([[1.0], [0.0], [1.0]])
    r = np.array([1.0, 2.0, 3.0])
    from edgemar.models import shared_z

    z = shared_z(A, r)
    assert z[0] == pytest.approx(1.5)
    lhs = capacity_surrogate(A, r, z)[0]
    assert lhs == pytest.approx(16.0 / 3.0)
    assert lhs >= (A[:, 0] * r).sum()


def test_server_term_tight_at_closed_forms():
    scn = make_scenario(K=3, N=2, S=[8.0, 11.0], F=[4.4, 4.6])
    s = np.array([7e4, 3e5, 9e5])
    r = np.array([0.5, 1.0, 2.0])
    y = server_term(s, r, optimal_w(s, r, CV), optimal_u(s, r, CV), scn)
    x = np.outer(r, scn.F / scn.S)
    exact = CV.power_server(x) * (CV.complexity(s) / r)[:, None]
    np.testing.assert_allclose(y, exact, rtol=1e-12)


def test_surrogate_equals_objective_at_closed_forms():
    scn = scenario(6, 3, seed=4)
    rng = np.random.default_rng(0)
    v = point(K=6, N=3, s=2e5, r=1.2, idx=rng.integers(0, 3, 6))
    v = with_auxiliaries(v, scn)
    assert objective_surrogate(v, scn) == pytest.approx(objective(v, scn).Q, rel=1e-12)
    worse = v.with_(w=2 * v.w)
    assert objective_surrogate(worse, scn, anchor=v) >= objective(v, scn).Q


def _independent_Q(v, scn):
    """Loop-based re-evaluation of the objective."""
    K, N = scn.K, scn.N
    cv = scn.curves
    dev = 0.0
    En = np.zeros(N)
    for k in range(K):
        c = 7e-10 * v.s[k] ** 1.5 + 0.083
        Lt = 8.0 * v.s[k] / (scn.R[k] * 1e6)
        Lcn = sum(v.A_hat[k, n] * scn.l[k, n] for n in range(N))
        Lp = c / v.r[k]
        L = Lt + Lcn + Lp
        f = v.f[k]
        ppre = -0.01071 * f ** 3 + 0.06055 * f ** 2 - 0.1028 * f + 0.107
        Ek = cv.t_pre * ppre + (0.018 * scn.R[k] + 0.7) * Lt + (0.079 * f + 0.59) * L
        A = 1 - 1.578 * np.exp(-6.5e-3 * np.sqrt(v.s[k]))
        dev += Ek + scn.lambda1[k] * L - scn.lambda2[k] * A
        for n in range(N):
            x = v.r[k] * scn.F[n] / scn.S[n]
            En[n] += v.A_hat[k, n] * (0.083 * x * x + 0.32) * Lp
    return En.sum() / N + dev / K


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2 ** 32 - 1))
def test_objective_matches_independent_loop(seed):
    rng = np.random.default_rng(seed)
    scn = scenario(3, 2, seed=seed % 1000)
    A = rng.uniform(0, 1, (3, 2))
    A /= A.sum(1, keepdims=True)
    from edgemar.models import DecisionVars

    v = DecisionVars(f=rng.uniform(2.2, 3.5, 3), s=rng.uniform(65536, 1048576, 3), A_hat=A,
                     r=rng.uniform(0.2, 5, 3))
    assert objective(v, scn).Q == pytest.approx(_independent_Q(v, scn), rel=1e-12)


def test_constraint_residual_signs():
    scn = make_scenario(K=2, N=1)
    v = point(K=2, N=1, r=[5.0, 5.0])
    res = constraint_residuals(v, scn)
    assert res["C7"] == pytest.approx(0.0, abs=1e-12)
    assert res["C5"] == 0.0 and res["C6"] == 0.0
    over = constraint_residuals(v.with_(r=np.array([10.0, 10.0])), scn)
    assert over["C7"] > 0
