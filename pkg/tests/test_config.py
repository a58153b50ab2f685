import json

import pytest

from dbm_edge.config import KEYS, ConfigError, describe_keys, load_file, parse_override, resolve


def test_defaults_and_experiment_defaults():
    cfg = resolve({"experiment": "coupling"})
    assert cfg.n == 50 and cfg["dbm.dt"] == 1e-4
    assert resolve().experiment == "rigidity"


def test_precedence_file_then_overrides():
    cfg = resolve({"experiment": "rigidity", "n": 30}, ["n=40", ("trials", 3)])
    assert cfg.n == 40 and cfg.trials == 3


def test_override_parsing():
    assert parse_override("t_grid=[0.5, 1]") == ("t_grid", [0.5, 1])
    assert parse_override("initial_data=small:0.1") == ("initial_data", "small:0.1")
    with pytest.raises(ConfigError):
        parse_override("nokey")
    with pytest.raises(ConfigError):
        parse_override("bogus=1")


@pytest.mark.parametrize("bad", [
    {"n": 1.5}, {"beta": 0.5}, {"t_grid": [1.0, 0.5]}, {"t_grid": []}, {"seed": -1},
    {"figures": "maybe"}, {"experiment": "nope"}, {"dbm.dt": 0}, {"unknown.key": 1},
])
def test_invalid_values(bad):
    with pytest.raises(ConfigError):
        resolve(bad)


def test_scalar_promoted_to_list():
    assert resolve({"t_grid": 0.5}).t_grid == [0.5]


def test_load_file(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"n": 10}))
    assert load_file(p) == {"n": 10}
    p.write_text(json.dumps({"m": 10}))
    with pytest.raises(ConfigError):
        load_file(p)
    with pytest.raises(ConfigError):
        load_file(tmp_path / "missing.json")
    p.write_text("[1, 2]")
    with pytest.raises(ConfigError):
        load_file(p)


def test_replace_and_as_dict():
    cfg = resolve().replace(n=12, dbm__scheme="implicit")
    assert cfg.n == 12 and cfg["dbm.scheme"] == "implicit"
    assert "output_dir" not in cfg.as_dict(include_output=False)
    with pytest.raises(ConfigError):
        cfg.replace(bogus=1)


def test_describe_lists_every_key():
    text = describe_keys()
    for k in KEYS:
        assert k in text
