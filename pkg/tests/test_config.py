"""
Tests for experiment configuration loading and overrides.
"""

import json
from pathlib import Path

import pytest
import yaml

from fracture_distill.config import (
    ExperimentConfig,
    SweepSpec,
    apply_overrides,
    config_hash,
    load_config,
    resolve_config,
    sample_config,
    snapshot,
    train_config_from_dict,
)
from fracture_distill.errors import ConfigError

DESK_CONFIG = Path(__file__).resolve().parents[1] / "configs" / "desk.yaml"


class TestLoadConfig:
    """Test reading configuration files."""

    def test_yaml(self, temp_dir):
        """Test YAML files load as dicts."""
        path = temp_dir / "c.yaml"
        path.write_text("seeds: [1, 2]\n")
        assert load_config(path) == {"seeds": [1, 2]}

    def test_json(self, temp_dir):
        """Test JSON files load as dicts."""
        path = temp_dir / "c.json"
        path.write_text(json.dumps({"output_dir": "x"}))
        assert load_config(path) == {"output_dir": "x"}

    def test_empty_yaml(self, temp_dir):
        """Test an empty YAML file means all defaults."""
        path = temp_dir / "c.yaml"
        path.write_text("")
        assert load_config(path) == {}

    @pytest.mark.parametrize(
        "name, content",
        [("c.toml", "a = 1"), ("c.yaml", "a: [1, 2"), ("c.json", "{"), ("c.yaml", "- 1\n- 2\n")],
    )
    def test_rejected_files(self, temp_dir, name, content):
        """Test bad suffixes, parse errors and non-mappings."""
        path = temp_dir / name
        path.write_text(content)
        with pytest.raises(ConfigError):
            load_config(path)

    def test_missing_file(self, temp_dir):
        """Test a missing file raises ConfigError."""
        with pytest.raises(ConfigError):
            load_config(temp_dir / "nope.yaml")

    def test_desk_config(self):
        """Test the shipped desk configuration resolves."""
        config = resolve_config(DESK_CONFIG)
        assert config.dataset.n_negative == 4000
        assert config.train.learning_rate == 1e-3
        assert config.sweep.parameter == "max_strength_a0"
        assert config.seeds == (0, 1, 2)


class TestExperimentConfig:
    """Test ExperimentConfig construction."""

    def test_round_trip(self, tiny_experiment):
        """Test to_dict/from_dict preserve the config and its hash."""
        again = ExperimentConfig.from_dict(tiny_experiment.to_dict())
        assert again == tiny_experiment
        assert again.hash == tiny_experiment.hash

    def test_nested_sections(self):
        """Test nested train sections become dataclasses."""
        config = train_config_from_dict(
            {"sharpening": {"center_t": 0.3}, "architecture": {"channels": [4, 8]}}
        )
        assert config.sharpening.center_t == 0.3
        assert config.architecture.channels == (4, 8)

    def test_unknown_keys(self):
        """Test misspelled keys are reported."""
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"train": {"learning_rte": 0.1}})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_dict({"datasets": {}})

    def test_duplicate_seeds(self):
        """Test seeds must be distinct."""
        with pytest.raises(ConfigError):
            ExperimentConfig(seeds=(1, 1))

    def test_for_seed(self, tiny_experiment):
        """Test one seed drives both data and training."""
        single = tiny_experiment.for_seed(11)
        assert single.seeds == (11,)
        assert single.dataset.seed == 11
        assert single.train.seed == 11

    def test_with_value(self, tiny_experiment):
        """Test sweep values land in the right section."""
        assert tiny_experiment.with_value("max_strength_a0", 8.0).train.sharpening.max_strength_a0 == 8.0
        assert tiny_experiment.with_value("center_t", 0.3).train.sharpening.center_t == 0.3
        assert tiny_experiment.with_value("positive_fraction", 0.5).dataset.positive_fraction == 0.5

    def test_sample_config_resolves(self):
        """Test the sample config is a valid experiment."""
        config = ExperimentConfig.from_dict(sample_config())
        assert config.sweep.values == (1.0, 4.0, 8.0, 16.0)


class TestSweepSpec:
    """Test sweep validation."""

    def test_unknown_parameter(self):
        """Test only supported parameters can be swept."""
        with pytest.raises(ConfigError):
            SweepSpec("learning_rate", (0.1,))

    @pytest.mark.parametrize(
        "parameter, value",
        [("center_t", 1.0), ("max_strength_a0", 0.5), ("positive_fraction", 1.5)],
    )
    def test_values_out_of_range(self, parameter, value):
        """Test each parameter's value range."""
        with pytest.raises(ConfigError):
            SweepSpec(parameter, (value,))

    def test_empty_values(self):
        """Test a sweep needs values."""
        with pytest.raises(ConfigError):
            SweepSpec("center_t", ())


class TestOverrides:
    """Test dotted command-line overrides."""

    def test_nested_override(self):
        """Test a nested path creates sections and parses scalars."""
        data = apply_overrides({}, ["train.sharpening.max_strength_a0=8", "seeds=[0, 1]"])
        assert data == {"train": {"sharpening": {"max_strength_a0": 8}}, "seeds": [0, 1]}

    def test_does_not_mutate_input(self):
        """Test the input dict is left alone."""
        original = {"train": {"batch_size": 4}}
        apply_overrides(original, ["train.batch_size=8"])
        assert original["train"]["batch_size"] == 4

    def test_malformed(self):
        """Test overrides without '=' are rejected."""
        with pytest.raises(ConfigError):
            apply_overrides({}, ["train.batch_size"])

    def test_override_through_scalar(self):
        """Test a path cannot descend into a scalar."""
        with pytest.raises(ConfigError):
            apply_overrides({"seeds": 3}, ["seeds.x=1"])

    def test_resolve_with_seeds(self, temp_dir):
        """Test --seed flags replace the file's seeds."""
        path = temp_dir / "c.yaml"
        path.write_text(yaml.safe_dump({"seeds": [0, 1, 2]}))
        config = resolve_config(path, ["train.batch_size=8"], [5])
        assert config.seeds == (5,)
        assert config.train.batch_size == 8


class TestConfigHash:
    """Test configuration hashing."""

    def test_stable_and_short(self, tiny_experiment):
        """Test the hash is 12 hex digits and reproducible."""
        digest = config_hash(tiny_experiment)
        assert len(digest) == 12
        int(digest, 16)
        assert digest == config_hash(tiny_experiment.to_dict())

    def test_sensitive_to_values(self, tiny_experiment):
        """Test a changed setting changes the hash."""
        assert tiny_experiment.hash != tiny_experiment.for_seed(8).hash

    def test_key_order_irrelevant(self):
        """Test canonical JSON ignores key order."""
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})

    def test_snapshot(self, tiny_experiment):
        """Test the snapshot carries config and hash."""
        payload = snapshot(tiny_experiment)
        assert payload["config_hash"] == tiny_experiment.hash
        assert payload["config"]["train"]["batch_size"] == 4
