import json

import pytest

from drvpp.config import (ExperimentConfig, build_config, config_keys, format_table, load_config,
                          parse_config_text)
from drvpp.errors import ValidationError


def test_defaults():
    cfg = build_config()
    assert cfg == ExperimentConfig()
    assert cfg.pv.eta_pv == 0.18
    assert (cfg.fleet.N_h, cfg.fleet.N_b, cfg.fleet.N_s, cfg.fleet.N_w) == (25, 15, 5, 7)
    assert cfg.battery.S_min == 20.0 and cfg.battery.S_max == 90.0
    assert cfg.control.slack_penalty == pytest.approx(1e4 * cfg.control.w_T)


def test_override_types():
    cfg = build_config({"fleet.N_h": "10", "control.horizon": "12", "experiment.epsilons": "0, 0.5,2"})
    assert cfg.fleet.N_h == 10 and cfg.control.horizon == 12
    assert cfg.epsilons == (0.0, 0.5, 2.0)


@pytest.mark.parametrize("key,value,msg", [
    ("battery.eta_ch", "1.5", "battery.eta_ch: value 1.5 violates upper bound"),
    ("battery.eta_ch", "0", "battery.eta_ch: value 0.0 violates lower bound >"),
    ("fleet.N_h", "2.5", "fleet.N_h: expected an integer"),
    ("fleet.N_h", "-1", "fleet.N_h: value -1 violates lower bound"),
    ("building.C1", "abc", "building.C1: expected a number"),
    ("control.weight_scheme", "cubic", "control.weight_scheme: value"),
    ("experiment.epsilons", "0.5,-1", "experiment.epsilons"),
    ("experiment.controllers", "fc,xx", "unknown entry 'xx'"),
    ("fleet.N_x", "3", "fleet.N_x: unknown configuration key"),
])
def test_rejects_bad_values(key, value, msg):
    with pytest.raises(ValidationError, match=msg):
        build_config({key: value})


def test_soc_bounds_ordered():
    with pytest.raises(ValidationError, match="soc_min"):
        build_config({"battery.soc_min": "0.9", "battery.soc_max": "0.2"})


def test_parse_config_text():
    text = "# comment\nfleet.N_h = 4  # trailing\n\ncontrol.w_T=50\n"
    assert parse_config_text(text) == {"fleet.N_h": "4", "control.w_T": "50"}
    with pytest.raises(ValidationError, match="line 2: duplicate key"):
        parse_config_text("fleet.N_h = 1\nfleet.N_h = 2\n")
    with pytest.raises(ValidationError, match="line 1: expected"):
        parse_config_text("fleet.N_h 1\n")


def test_flat_round_trip():
    cfg = build_config({"fleet.N_b": "3", "sim.profile": "autumn", "experiment.epsilons": "1"})
    flat = json.loads(cfg.to_json())
    assert set(flat) == set(config_keys())
    raw = {k: ",".join(map(str, v)) if isinstance(v, list) else str(v) for k, v in flat.items()
           if v is not None}
    assert build_config(raw) == cfg


def test_load_config_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("fleet.N_s = 2\n")
    assert load_config(path).fleet.N_s == 2
    with pytest.raises(OSError, match="cannot read config"):
        load_config(tmp_path / "missing.cfg")


def test_format_table_lists_every_key():
    lines = format_table(build_config()).splitlines()
    assert [ln.split()[0] for ln in lines] == list(config_keys())
