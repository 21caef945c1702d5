import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prefixdiff.config import (
    ConfigError,
    ExperimentConfig,
    apply_overrides,
    config_from_dict,
    config_to_dict,
    desk_config,
    from_json,
    load_config,
    save_config,
    to_json,
)


class TestRoundTrip:
    def test_desk_defaults_round_trip(self):
        config = desk_config("demo", seed=3)
        assert from_json(to_json(config)) == config

    def test_canonical_text_round_trips_bit_exactly(self):
        text = to_json(desk_config("demo"))
        assert to_json(from_json(text)) == text

    def test_file_round_trip(self, tmp_path):
        config = desk_config("filey", seed=12)
        path = tmp_path / "config.json"
        save_config(config, path)
        assert load_config(path) == config

    def test_dict_round_trip_keeps_tuples(self):
        config = desk_config()
        back = config_from_dict(config_to_dict(config))
        assert back.latent.channel_grid == config.latent.channel_grid
        assert isinstance(back.latent.channel_grid, tuple)


override_menu = st.lists(
    st.sampled_from([
        "seed=7",
        "deterministic=false",
        "ae.steps=123",
        "ae.structured=false",
        "ae.grid_weights=[1,1,1,1,1,1,6]",
        "diffusion.lr=0.002",
        "diffusion.augmented=false",
        "diffusion.loss_normalization=\"active\"",
        "data.shapes.texture_amplitude=0.3",
        "data.heldout_fraction=0.25",
        "eval.cadence=250",
        "sampling.steps=8",
        "name=\"alt-run\"",
        "reuse.autoencoder=\"/tmp/x/ae.pt\"",
    ]),
    unique=True,
    max_size=6,
)


@given(override_menu)
@settings(max_examples=40, deadline=None)
def test_round_trip_over_random_overrides(overrides):
    config = apply_overrides(desk_config(), overrides)
    assert from_json(to_json(config)) == config
    assert to_json(from_json(to_json(config))) == to_json(config)


class TestStrictParsing:
    def test_unknown_key_reports_path(self):
        data = config_to_dict(desk_config())
        data["diffusion"]["widht"] = 1
        with pytest.raises(ConfigError) as excinfo:
            config_from_dict(data)
        assert excinfo.value.path == "diffusion.widht"

    def test_type_error_reports_path(self):
        data = config_to_dict(desk_config())
        data["ae"]["steps"] = "lots"
        with pytest.raises(ConfigError) as excinfo:
            config_from_dict(data)
        assert excinfo.value.path == "ae.steps"

    def test_bool_is_not_int(self):
        data = config_to_dict(desk_config())
        data["seed"] = True
        with pytest.raises(ConfigError):
            config_from_dict(data)

    def test_optional_accepts_null(self):
        data = config_to_dict(desk_config())
        data["ae"]["grid_weights"] = None
        assert config_from_dict(data).ae.grid_weights is None

    def test_tuple_decoded_from_list(self):
        data = config_to_dict(desk_config())
        data["latent"]["channel_grid"] = [8, 16]
        assert config_from_dict(data).latent.channel_grid == (8, 16)

    def test_invalid_nested_value_reports_path(self):
        data = config_to_dict(desk_config())
        data["latent"]["channel_grid"] = [16, 8]
        with pytest.raises(ConfigError) as excinfo:
            config_from_dict(data)
        assert "latent" in str(excinfo.value)

    def test_version_mismatch_rejected(self):
        data = config_to_dict(desk_config())
        data["config_version"] = 99
        with pytest.raises(ConfigError, match="config_version"):
            config_from_dict(data)

    def test_invalid_json_rejected(self):
        with pytest.raises(ConfigError, match="invalid JSON"):
            from_json("{nope")

    def test_non_object_root_rejected(self):
        with pytest.raises(ConfigError, match="root"):
            from_json("[1, 2]")


class TestOverrides:
    def test_nested_override(self):
        config = apply_overrides(desk_config(), ["diffusion.steps=42"])
        assert config.diffusion.steps == 42

    def test_string_values_pass_through(self):
        config = apply_overrides(desk_config(), ["name=my-run"])
        assert config.name == "my-run"

    def test_unknown_path_rejected(self):
        with pytest.raises(ConfigError) as excinfo:
            apply_overrides(desk_config(), ["diffusion.nope=1"])
        assert excinfo.value.path == "diffusion.nope"

    def test_missing_equals_rejected(self):
        with pytest.raises(ConfigError, match="key.path=value"):
            apply_overrides(desk_config(), ["diffusion.steps"])

    def test_frozen_configs(self):
        config = desk_config()
        with pytest.raises(dataclasses.FrozenInstanceError):
            config.seed = 3
