import math

import pytest

from idcascade.config import (ConfigError, RunConfig, config_hash,
                              load_config, parse_config, serialize_config)
from idcascade.field import GridSpec
from idcascade.levy import AtomicJumps, ZeroJumps

SAMPLE = """
[model]
sigma2 = 0.5
jump_kind = none

[grid]
levels = 9
oversample = 2
cell_levels = 0

[experiment]
seed = 123
replicas = 50

[output]
directory = out
formats = json
"""


def test_parse_and_typed_accessors():
    cfg = parse_config(SAMPLE)
    assert cfg.seed() == 123
    assert cfg.replicas() == 50
    assert cfg.get_float("model", "sigma2") == 0.5
    assert cfg.get("model", "missing", "fallback") == "fallback"
    assert cfg.output_dir() == "out"
    assert cfg.output_formats() == "json"
    grid = cfg.build_grid()
    assert grid == GridSpec((0.0, 1.0), 9, 2, 0)
    model = cfg.build_model()
    assert model.sigma2 == 0.5
    assert isinstance(model.nu, ZeroJumps)


def test_defaults_without_file():
    cfg = RunConfig()
    assert cfg.seed() == 0
    assert cfg.replicas() == 1
    assert cfg.build_grid() == GridSpec((0.0, 1.0), 8, 4, None)
    assert cfg.output_formats() == "both"


def test_serialize_round_trip_is_a_fixpoint():
    cfg = parse_config(SAMPLE)
    text = serialize_config(cfg)
    again = serialize_config(parse_config(text))
    assert text == again
    # canonical section order, keys sorted inside each section
    heads = [ln for ln in text.splitlines() if ln.startswith("[")]
    assert heads == ["[model]", "[grid]", "[experiment]", "[output]"]


def test_hash_ignores_formatting_but_not_values():
    messy = SAMPLE.replace("sigma2 = 0.5", "sigma2 =    0.5").replace(
        "\n[grid]", "\n\n\n[grid]")
    assert config_hash(parse_config(messy)) == config_hash(
        parse_config(SAMPLE))
    other = SAMPLE.replace("seed = 123", "seed = 124")
    assert config_hash(parse_config(other)) != config_hash(
        parse_config(SAMPLE))
    assert len(config_hash(parse_config(SAMPLE))) == 16


def test_unknown_section_and_bad_values():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config("[nonsense]\nx = 1\n")
    cfg = parse_config(SAMPLE)
    cfg.set("model", "sigma2", "not-a-number")
    with pytest.raises(ConfigError, match="sigma2"):
        cfg.build_model()
    cfg = parse_config(SAMPLE)
    cfg.set("model", "jump_kind", "martian")
    with pytest.raises(ConfigError, match="jump_kind"):
        cfg.build_model()
    cfg = parse_config(SAMPLE)
    cfg.set("experiment", "replicas", "0")
    with pytest.raises(ConfigError, match="replicas"):
        cfg.replicas()


def test_atom_model_from_config():
    cfg = parse_config(SAMPLE)
    cfg.set("model", "sigma2", "0")
    cfg.set("model", "jump_kind", "atoms")
    cfg.set("model", "atom_locations", str(-math.log(2.0)))
    cfg.set("model", "atom_masses", "1.0")
    model = cfg.build_model()
    assert isinstance(model.nu, AtomicJumps)
    assert model.sigma2 == 0.0
    cfg.set("model", "atom_masses", "1.0, 2.0")
    with pytest.raises(ConfigError, match="equal length"):
        cfg.build_model()


def test_shipped_configs_parse(pytestconfig):
    root = pytestconfig.rootpath
    for name in ("lognormal.ini", "atom.ini"):
        cfg = load_config(root / "configs" / name)
        cfg.build_model()
        cfg.build_grid()
        assert cfg.replicas() >= 1


def test_load_config_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_config(tmp_path / "nope.ini")
