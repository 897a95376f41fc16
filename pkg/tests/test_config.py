import math

import pytest

from mpccolor.config import ConfigError, PipelineConfig


@pytest.mark.parametrize("bad", [
    {"delta_exp": 1.0}, {"alpha": 0.6}, {"eps_cap": 0.2}, {"zeta": 0}, {"mode": "list"},
    {"delta_min": 0.95}, {"vote_seed_bits": 0}, {"round_cap": 0},
])
def test_validation(bad):
    with pytest.raises(ConfigError):
        PipelineConfig(**bad)


def test_derived_values():
    cfg = PipelineConfig()
    assert cfg.C == 16 and cfg.gamma == 32 and cfg.reps == 16
    assert PipelineConfig(alpha=0.3).C == 4
    assert cfg.p_slack == 1 / 8 and PipelineConfig(mode="relaxed").p_slack == 1 / 16
    assert cfg.low_degree_floor(1024) == 10
    assert cfg.seed_bits_cap(10_000) == math.floor(0.5 * math.log2(10_000))
    assert cfg.seed_bits_cap(4) == cfg.vote_seed_bits
    assert cfg.partition().depth_offset == cfg.depth_offset


def test_load_toml_and_json(tmp_path):
    t = tmp_path / "c.toml"
    t.write_text('alpha = 0.125\nmode = "relaxed"\nsafety_net = false\n')
    cfg = PipelineConfig.load(t)
    assert (cfg.alpha, cfg.mode, cfg.safety_net) == (0.125, "relaxed", False)
    j = tmp_path / "c.json"
    j.write_text('{"round_cap": 99, "safety_net": "yes"}')
    cfg = PipelineConfig.load(j)
    assert cfg.round_cap == 99 and cfg.safety_net is True
    j.write_text('{"nested": {"a": 1}}')
    with pytest.raises(ConfigError):
        PipelineConfig.load(j)


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        PipelineConfig.from_mapping({"alpah": 0.1})
    with pytest.raises(ConfigError):
        PipelineConfig.from_mapping({"notes": 1})


def test_round_trip_through_dict():
    cfg = PipelineConfig(theta_d24=3.0, layer2_iterations=5)
    assert PipelineConfig.from_mapping(cfg.to_dict()) == cfg
    assert cfg.replace(zeta=0.25).zeta == 0.25
