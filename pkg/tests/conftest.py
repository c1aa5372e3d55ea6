import numpy as np
import pytest

from edgemar.models import DecisionVars, ModelCurves
from edgemar.scenario import ExperimentConfig, Scenario, generate_scenario


def make_scenario(K=1, N=1, R=100.0, l=0.115, S=10.0, F=4.5, lambda1=10.0, lambda2=100.0,
                  L_max=0.25, **kw):
    """Hand-built scenario with scalar or array fields."""
    return Scenario(
        K=K, N=N,
        R=np.broadcast_to(np.asarray(R, float), (K,)).copy(),
        l=np.broadcast_to(np.asarray(l, float), (K, N)).copy(),
        S=np.broadcast_to(np.asarray(S, float), (N,)).copy(),
        F=np.broadcast_to(np.asarray(F, float), (N,)).copy(),
        lambda1=np.full(K, float(lambda1)), lambda2=np.full(K, float(lambda2)),
        L_max=np.full(K, float(L_max)), curves=kw.pop("curves", ModelCurves()), **kw)


def point(K=1, N=1, f=3.0, s=65536.0, r=1.0, idx=None):
    idx = np.zeros(K, int) if idx is None else np.asarray(idx)
    A = np.zeros((K, N))
    A[np.arange(K), idx] = 1.0
    return DecisionVars(f=np.full(K, float(f)), s=np.full(K, float(s)), A_hat=A,
                        r=np.broadcast_to(np.asarray(r, float), (K,)).copy())


def scenario(K, N, seed=0, **params):
    return generate_scenario(ExperimentConfig().with_params(users=K, servers=N, **params), seed=seed)


@pytest.fixture
def one_device():
    return make_scenario(), point()


@pytest.fixture(scope="session")
def small_scn():
    return scenario(10, 3, seed=0)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
