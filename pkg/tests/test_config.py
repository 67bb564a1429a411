import pytest

from singvoc.config import (
    Config,
    ConfigError,
    load_config,
    override_config,
    validate_config,
)


def test_defaults_match_module_constants():
    c = Config()
    assert c.sample_rate == 16000
    assert c.frame_period == 0.005
    assert c.mgc_order == 24
    assert c.mgc_alpha == 0.42
    assert c.hnm_order == 39
    assert c.glott_bands == 5
    assert c.seed == 0


def test_load_config_parses_pairs_and_comments(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text(
        "# experiment defaults\n"
        "\n"
        "mgc_order = 12\n"
        "mgc_alpha=0.35   # warped a bit less\n"
        "seed = 7\n",
        encoding="utf-8",
    )
    c = load_config(path)
    assert c.mgc_order == 12
    assert c.mgc_alpha == 0.35
    assert c.seed == 7
    # untouched fields keep their defaults
    assert c.sample_rate == 16000
    assert c.hnm_order == 39


def test_load_config_rejects_unknown_key(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("sample_rate=16000\nmgc_orderx=3\n", encoding="utf-8")
    with pytest.raises(ConfigError, match=r":2: unknown key 'mgc_orderx'"):
        load_config(path)


def test_load_config_rejects_bad_value(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("mgc_order=twelve\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="expects int"):
        load_config(path)


def test_load_config_rejects_line_without_equals(tmp_path):
    path = tmp_path / "run.cfg"
    path.write_text("mgc_order 12\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="key=value"):
        load_config(path)


def test_override_applies_values_and_skips_none():
    base = Config()
    c = override_config(base, mgc_order=10, seed=None, mgc_alpha=None)
    assert c.mgc_order == 10
    assert c.seed == base.seed
    assert c.mgc_alpha == base.mgc_alpha
    assert override_config(base) == base


def test_override_rejects_unknown_field():
    with pytest.raises(ConfigError, match="unknown config field"):
        override_config(Config(), warp_factor=0.5)


def test_validation_rejects_out_of_range_alpha():
    with pytest.raises(ConfigError, match="mgc_alpha"):
        validate_config(Config(mgc_alpha=1.0))


def test_validation_rejects_nonpositive_rate():
    with pytest.raises(ConfigError, match="sample_rate"):
        validate_config(Config(sample_rate=0))


def test_validation_pins_band_count():
    # the stored feature layout reserves a fixed number of band slots
    with pytest.raises(ConfigError, match="glott_bands"):
        validate_config(Config(glott_bands=4))


def test_override_revalidates():
    with pytest.raises(ConfigError):
        override_config(Config(), frame_period=-0.01)
