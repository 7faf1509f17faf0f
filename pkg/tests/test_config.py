import json

import pytest

from coopreg.config import ConfigError, RunConfig, golden_config, initial_profile


def test_golden_round_trip(tmp_path):
    cfg = golden_config()
    path = tmp_path / "cfg.json"
    cfg.dump(path)
    again = RunConfig.load(path)
    assert again.to_dict() == cfg.to_dict()
    assert len(again.agents) == 4 and again.design.nz == 101


def test_replace_overrides_simulation_only(small_dict):
    cfg = RunConfig.from_dict(small_dict)
    new = cfg.replace(dt=5e-4, nz=None)
    assert new.simulation.dt == 5e-4 and new.simulation.nz == cfg.simulation.nz
    assert new.design == cfg.design


@pytest.mark.parametrize("where", ["top", "agent", "design", "disturbance"])
def test_unknown_keys_rejected(small_dict, where):
    target = {"top": small_dict, "agent": small_dict["agents"][0], "design": small_dict["design"],
              "disturbance": small_dict["agents"][0]["disturbance"]}[where]
    target["bogus"] = 1
    with pytest.raises(ConfigError, match="unknown keys"):
        RunConfig.from_dict(small_dict)


def test_missing_section(small_dict):
    del small_dict["leader"]
    with pytest.raises(ConfigError, match="missing section 'leader'"):
        RunConfig.from_dict(small_dict)


def test_equal_decay_rates_rejected(small_dict):
    small_dict["agents"][0]["mu_v_bar"] = small_dict["agents"][0]["mu_bar"]
    with pytest.raises(ConfigError, match="mu_bar must differ"):
        RunConfig.from_dict(small_dict)


def test_observer_rate_below_mu_v_bar_rejected(small_dict):
    small_dict["agents"][0]["observer_eigs"] = [[-20.0, 0.0], [-25.0, 0.0]]
    with pytest.raises(ConfigError, match="exceeds the decay rate"):
        RunConfig.from_dict(small_dict)


@pytest.mark.parametrize("mutate,msg", [
    (lambda d: d["design"].update(local_eigs=[]), "local_eigs"),
    (lambda d: d["agents"][0].update(v0=[1.0]), "v0 must have length 2"),
    (lambda d: d["agents"][0].update(observer_eigs=[[-30.0, 0.0]]), "needs 2 observer eigenvalues"),
    (lambda d: d["simulation"].update(t_final=1.0), "exceeds the design window"),
    (lambda d: d["simulation"].update(dt=0.0), "dt and t_final"),
    (lambda d: d["agents"].append(d["agents"][0]), "agent sections"),
    (lambda d: d["agents"][0].update(mu=-1.0), "must be positive"),
])
def test_validation_messages(small_dict, mutate, msg):
    mutate(small_dict)
    with pytest.raises(ConfigError, match=msg):
        RunConfig.from_dict(small_dict)


def test_problems_are_collected(small_dict):
    small_dict["simulation"].update(t_final=1.0)
    small_dict["agents"][0].update(mu=-1.0)
    with pytest.raises(ConfigError) as exc:
        RunConfig.from_dict(small_dict)
    assert "design window" in str(exc.value) and "positive" in str(exc.value)


def test_wrong_field_type_is_config_error(small_dict):
    small_dict["agents"][0] = json.loads(json.dumps(small_dict["agents"][0]))
    del small_dict["agents"][0]["ell"]
    with pytest.raises(ConfigError, match="agents\\[0\\]"):
        RunConfig.from_dict(small_dict)


def test_initial_profile_broadcasts():
    import numpy as np
    z = np.linspace(0, 1, 5)
    assert np.allclose(initial_profile("1", z), 1.0)
    assert np.allclose(initial_profile("z**2", z), z ** 2)
