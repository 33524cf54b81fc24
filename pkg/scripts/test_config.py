#!/usr/bin/env python3
"""
Strict JSON experiment configuration.
"""
import json
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "psidit"))

from psidit.config import ConfigError, ExperimentConfig, load_config  # noqa: E402

CONFIGS = Path(__file__).resolve().parents[1] / "assets" / "configs"


def test_defaults_validate():
    config = load_config()
    assert config.architecture == "psi_dit"
    assert config.model.sscm_init_policy == "nlb_copy" and config.model.enable_zero_init
    assert (config.schedule.r_min, config.schedule.t_total, config.schedule.k, config.schedule.c) == (0.75, 2000, 1000, 10)
    assert config.corpus_dir == Path("runs/default/data")


@pytest.mark.parametrize("name", ["toy.json", "smoke.json"])
def test_shipped_configs_load(name):
    config = load_config(CONFIGS / name)
    assert config.model.image_size % config.degradation.scale == 0


def test_toy_config_matches_defaults():
    toy = load_config(CONFIGS / "toy.json").to_dict()
    defaults = ExperimentConfig().to_dict()
    assert toy.pop("out_dir") == "runs/toy"
    defaults.pop("out_dir")
    assert toy == defaults


def test_partial_sections_keep_defaults():
    config = ExperimentConfig.from_dict({"model": {"depth": 2}, "seed": 5}).validate()
    assert config.model.depth == 2 and config.model.width == 64
    assert config.seed == 5
    assert config.degradation.blur_sigma == (0.4, 1.2)


def test_dict_round_trip_and_digest():
    config = ExperimentConfig.from_dict({"schedule": {"strategy": "fixed", "fixed_ratio": 0.5}})
    again = ExperimentConfig.from_dict(json.loads(json.dumps(config.to_dict())))
    assert again.to_dict() == config.to_dict()
    assert again.digest() == config.digest()
    assert config.digest() != ExperimentConfig().digest()
    assert len(config.digest()) == 64


@pytest.mark.parametrize(
    "raw",
    [
        {"modle": {}},
        {"model": {"depht": 3}},
        {"model": []},
        {"schedule": {"k": 3000}},
        {"schedule": {"strategy": "cosine"}},
        {"architecture": "unet"},
        {"seed": -1},
        {"model": {"image_size": 30}, "degradation": {"scale": 4}},
        {"model": {"vocab_size": 8}},
        {"eval": {"crop_size": 64}},
        {"eval": {"crop_size": 10}},
        {"eval": {"crop_size": 0}},
        {"degradation": {"quant_levels": 1}},
    ],
)
def test_invalid_configs_are_rejected(raw):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_dict(raw).validate()


def test_load_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{model: 1")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ValueError):
        load_config(bad)


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q"]))
