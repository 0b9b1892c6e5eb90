import json

import pytest
import yaml

from riskpipe.cli import main
from riskpipe.config import load_config, preset_names
from riskpipe.errors import ConfigError


@pytest.mark.parametrize("name", ["desk_null", "desk_signal", "full"])
def test_presets_load(name):
    cfg = load_config(name)
    assert cfg.study.window_length_s > 0


def test_preset_names():
    assert {"desk_null", "desk_signal", "full"} <= set(preset_names())


def test_null_preset_is_null_mode():
    assert load_config("desk_null").mode.mode == "null"
    assert load_config("desk_null").mode.beta == 0.0


def test_seed_override():
    assert load_config("desk_signal", seed=7).seed == 7


def test_unknown_key_rejected():
    with pytest.raises(ConfigError):
        load_config({"study": {"windows": 3}})


def test_invalid_accident_type_rejected():
    with pytest.raises(ConfigError):
        load_config({"study": {"predictable_types": [1, 31]}})


def test_missing_preset():
    with pytest.raises(ConfigError):
        load_config("no_such_preset")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["presets"]) == 0
    assert "desk_signal" in capsys.readouterr().out
    bad = tmp_path / "bad.yaml"
    bad.write_text("study: {windows: 3}\n")
    assert main(["run", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["run", "--config", "desk_null", "--stages", "bogus", "--out", str(tmp_path / "o")]) == 2
    assert main(["compare", str(tmp_path / "a"), str(tmp_path / "b")]) == 3


def test_cli_run_tiny(tmp_path, tiny_config, capsys):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config))
    out = tmp_path / "exp"
    assert main(["run", "--config", str(path), "--out", str(out), "--timings", str(tmp_path / "t.json")]) == 0
    text = capsys.readouterr().out
    assert "experiment directory" in text
    report = json.loads((out / "evaluate" / "report.json").read_text())
    assert {"forest", "net"} <= set(report)
    timings = json.loads((tmp_path / "t.json").read_text())
    assert "train-nn" in timings
    # a second run is fully cached
    assert main(["run", "--config", str(path), "--out", str(out)]) == 0
    assert capsys.readouterr().out.count("cached") == 10
