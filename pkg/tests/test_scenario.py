import numpy as np
import pytest

from edgemar.scenario import (
    ConfigError, ExperimentConfig, generate_scenario, load_config, validate_feasibility,
)

from conftest import make_scenario


def test_generation_is_deterministic():
    a = generate_scenario(ExperimentConfig(), seed=7)
    b = generate_scenario(ExperimentConfig(), seed=7)
    assert a.fingerprint() == b.fingerprint()
    c = generate_scenario(ExperimentConfig(), seed=8)
    assert a.fingerprint() != c.fingerprint()


def test_default_ranges():
    scn = generate_scenario(ExperimentConfig())
    assert (scn.K, scn.N, scn.seed) == (100, 10, 42)
    assert np.all((scn.l >= 0.100) & (scn.l <= 0.130))
    assert np.all((scn.R >= 50) & (scn.R <= 200))
    assert np.all((scn.S >= 8) & (scn.S <= 12))
    assert np.all((scn.F >= 4.4) & (scn.F <= 4.6))


def test_trials_give_different_streams():
    a = generate_scenario(ExperimentConfig(), seed=3, trial=0)
    b = generate_scenario(ExperimentConfig(), seed=3, trial=1)
    assert not np.array_equal(a.R, b.R)


@pytest.mark.parametrize("kw", [dict(users=0), dict(R_min=300.0), dict(A_min=1.0),
                                dict(L_max_ms=-1.0)])
def test_invalid_config(kw):
    with pytest.raises(ConfigError):
        generate_scenario(ExperimentConfig().with_params(**kw))


def test_unknown_key():
    with pytest.raises(ConfigError):
        ExperimentConfig().with_params(bogus=1)


def test_per_device_weights():
    scn = generate_scenario(ExperimentConfig().with_params(users=3, servers=2,
                                                           lambda2=(1.0, 2.0, 3.0)))
    np.testing.assert_array_equal(scn.lambda2, [1.0, 2.0, 3.0])
    with pytest.raises(ConfigError):
        generate_scenario(ExperimentConfig().with_params(users=2, lambda1=(1.0, 2.0, 3.0)))


def test_load_config(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nusers = 12\nservers = 4  # trailing\nlambda2 = 250\n"
                 "algorithm = rao\nseeds = 3\nsolver.tau = 1e-4\n")
    cfg = load_config(p)
    assert cfg["users"] == 12 and cfg["servers"] == 4 and cfg["lambda2"] == 250.0
    assert cfg.algorithm == "rao" and cfg.seeds == 3 and cfg.solver == {"tau": 1e-4}
    p.write_text("nonsense line\n")
    with pytest.raises(ConfigError):
        load_config(p)


def test_feasibility_reports():
    assert validate_feasibility(generate_scenario(ExperimentConfig())).feasible
    tight = make_scenario(L_max=0.050)
    rep = validate_feasibility(tight)
    assert not rep.feasible and rep.slack["C2"] < 0
    assert validate_feasibility(make_scenario()).feasible


def test_seed_range():
    with pytest.raises(ConfigError):
        generate_scenario(ExperimentConfig(), seed=-1)
