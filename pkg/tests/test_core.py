import pytest

from teamgrpo.core import (
    ConfigError,
    ContractError,
    GameConfig,
    MixerConfig,
    RoleMapping,
    TerminationFlag,
    map_role,
    validate_config,
)


def make_cfg(**overrides):
    base = dict(
        n_agents=2, n_policies=1, turn_horizon=4, branches=4, n_envs=2, total_steps=3
    )
    base.update(overrides)
    return GameConfig(**base)


def test_role_sharing_preset_is_valid():
    cfg = make_cfg(n_policies=1)
    mapping = RoleMapping.shared(2)
    assert validate_config(cfg, mapping) is cfg
    assert mapping.assignment == (0, 0)


def test_role_specialized_preset_is_valid():
    cfg = make_cfg(n_policies=2)
    mapping = RoleMapping.specialized(2)
    assert validate_config(cfg, mapping) is cfg
    assert mapping.assignment == (0, 1)


def test_non_surjective_mapping_names_the_starved_policy():
    cfg = make_cfg(n_policies=2)
    with pytest.raises(ConfigError, match="policy 1 has no agents"):
        validate_config(cfg, RoleMapping((0, 0)))


def test_policies_cannot_exceed_agents():
    with pytest.raises(ConfigError, match="n_policies exceeds n_agents"):
        validate_config(make_cfg(n_policies=3), RoleMapping((0, 1)))


@pytest.mark.parametrize(
    "field,value,fragment",
    [
        ("turn_horizon", 0, "turn_horizon"),
        ("branches", 0, "branches"),
        ("n_envs", 0, "n_envs"),
        ("total_steps", 0, "total_steps"),
        ("sample_temperature", -0.5, "sample_temperature"),
        ("seed", -1, "seed"),
        ("seed", 2**64, "seed"),
    ],
)
def test_each_violated_invariant_is_named(field, value, fragment):
    with pytest.raises(ConfigError, match=fragment):
        validate_config(make_cfg(**{field: value}), RoleMapping.shared(2))


def test_bad_mixer_form_rejected():
    with pytest.raises(ConfigError, match="mixer form"):
        validate_config(
            make_cfg(mixer=MixerConfig(form="other")), RoleMapping.shared(2)
        )


def test_map_role_sharing_and_specialized():
    shared = RoleMapping.shared(2)
    specialized = RoleMapping.specialized(2)
    assert map_role(shared, 1) == 0
    assert map_role(specialized, 1) == 1


def test_map_role_is_total_and_deterministic():
    mapping = RoleMapping((1, 0, 1))
    assert [map_role(mapping, i) for i in range(3)] == [1, 0, 1]
    assert [map_role(mapping, i) for i in range(3)] == [1, 0, 1]


def test_map_role_rejects_out_of_range_agent():
    with pytest.raises(ConfigError, match="agent index 4"):
        map_role(RoleMapping.shared(2), 4)


def test_termination_flag_guards_cause():
    assert TerminationFlag(True, "solved").cause == "solved"
    with pytest.raises(ContractError):
        TerminationFlag(True, "other")
    with pytest.raises(ContractError):
        TerminationFlag(False, "solved")
