import json
from fractions import Fraction

import numpy as np
import pytest

from gasket_bhi.config import ConfigError, ExperimentConfig, describe, parse_config, parse_config_text
from gasket_bhi.io import RunManifest, csv_text, dumps, fmt


def test_defaults_roundtrip():
    cfg = ExperimentConfig()
    assert parse_config_text(cfg.text()) == cfg
    assert parse_config_text(describe()) == cfg


def test_file_and_overrides(tmp_path):
    p = tmp_path / "c.cfg"
    p.write_text("# comment\ninstances = 7\nalphas = 0.3, 0.7\n")
    cfg = parse_config(p, {"p3_sq": "1/4,1/2"})
    assert cfg.instances == 7 and cfg.alphas == (0.3, 0.7)
    assert cfg.p3_sq == (Fraction(1, 4), Fraction(1, 2))
    assert cfg.digest() != ExperimentConfig().digest()


@pytest.mark.parametrize("text,msg", [
    ("bogus = 1", "unknown key"),
    ("level 7", "expected"),
    ("level = seven", "bad value"),
    ("level = 7\nlevel = 8", "duplicate"),
    ("density = 0", "density"),
    ("window = F", "window"),
])
def test_errors(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config_text(text)


def test_alpha_range_by_battery():
    parse_config_text("alphas = 1.5", battery="scaling")
    with pytest.raises(ConfigError, match="hypothesis"):
        parse_config_text("alphas = 1.5", battery="bhi")
    parse_config_text("alphas = 1.5\nexploratory = true", battery="bhi")


def test_fmt():
    assert fmt(Fraction(3, 8)) == "3/8"
    assert fmt(0.1) == "0.10000000000000001"
    assert fmt(float("nan")) == ""
    assert fmt(np.int64(4)) == "4"


def test_dumps_is_json():
    obj = {"a": [1, 2.5, float("inf")], "b": {"c": Fraction(1, 3), "d": None}, "e": np.float64(0.1)}
    back = json.loads(dumps(obj))
    assert back == {"a": [1, 2.5, None], "b": {"c": "1/3", "d": None}, "e": 0.1}


def test_csv_schema_line():
    text = csv_text(["x", "y"], [[1, 0.5], {"x": 2, "y": None}], "demo")
    assert text.splitlines() == ["# demo", "x,y", "1,0.5", "2,"]


def test_manifest_hashes(tmp_path):
    f = tmp_path / "a.csv"
    f.write_text("x\n1\n")
    man = RunManifest("demo")
    man.record(f)
    man.finish(tmp_path)
    first = (tmp_path / "manifest.json").read_bytes()
    man.finish(tmp_path)
    assert (tmp_path / "manifest.json").read_bytes() == first
    assert len((tmp_path / "runs.jsonl").read_text().splitlines()) == 2
