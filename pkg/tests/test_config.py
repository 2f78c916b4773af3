import json
from pathlib import Path

import pytest

from cccompact.config import ConfigError, load_config, locate_lines, validate_config, validate_text

SCEN = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.mark.parametrize("path", sorted(SCEN.glob("*.json")), ids=lambda p: p.stem)
def test_shipped_scenarios_validate(path):
    assert validate_config(path) == []


def _text(cfg):
    return json.dumps(cfg, indent=1)


BASE = {"scenario": "distance", "family": {"kind": "builtin", "name": "heisenberg"},
        "grid": {"box": [[0, 1], [0, 1], [0, 1]], "h": 0.25}}


def test_beta_constraint_named():
    cfg = dict(BASE, engine={"alpha": 4, "beta": 3})
    _, issues = validate_text(_text(cfg))
    assert len(issues) == 1 and "2^beta > 2*alpha" in issues[0].message
    assert issues[0].path == "engine.beta"


def test_negative_spacing_line_precise():
    text = _text(dict(BASE, grid={"box": [[0, 1], [0, 1], [0, 1]], "h": -0.25}))
    _, issues = validate_text(text, "x.json")
    assert issues and issues[0].path == "grid.h"
    line = text.splitlines()[issues[0].line - 1]
    assert '"h"' in line
    assert str(issues[0]).startswith(f"x.json:{issues[0].line}: grid.h:")


def test_other_errors():
    assert validate_text("{")[1][0].message.startswith("invalid JSON")
    _, issues = validate_text(_text({"scenario": "teleport"}))
    assert issues
    _, issues = validate_text(_text({"scenario": "distance"}))
    assert any("family" in i.message for i in issues)
    _, issues = validate_text(_text(dict(BASE, grid={"box": [[1, 0], [0, 1], [0, 1]], "h": 0.1})))
    assert issues[0].path == "grid.box[0]"
    _, issues = validate_text(_text(dict(BASE, bogus=1)))
    assert issues


def test_load_and_unreadable(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(_text(BASE))
    assert load_config(p)["scenario"] == "distance"
    with pytest.raises(ConfigError):
        validate_config(tmp_path / "missing.json")
    p.write_text(_text(dict(BASE, seed=-1)))
    with pytest.raises(ConfigError):
        load_config(p)


def test_locate_lines():
    text = '{\n "a": 1,\n "b": {\n  "c": [\n   2,\n   3\n  ]\n }\n}'
    L = locate_lines(text)
    assert L[("a",)] == 2 and L[("b", "c")] == 4 and L[("b", "c", 1)] == 6
