import json
import os
import subprocess
import sys

import pytest

from cccompact.cli import main, version_hash


def write(tmp_path, cfg, name="c.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg, indent=1))
    return str(p)


EUC_PAIR = {"scenario": "distance", "name": "pair", "seed": 3,
            "family": {"kind": "builtin", "name": "euclidean", "params": {"n": 2}},
            "grid": {"box": [[0, 1], [0, 1]], "h": 0.015625, "neighbor_radius": 2},
            "params": {"pairs": [[[0, 0], [1, 0]]]}}


def compact_cfg(**params):
    return {"scenario": "compactness", "name": "c", "seed": 1,
            "sequence": {"kind": "builtin", "name": "identity-euclidean", "j_max": 8},
            "grid": {"box": [[0, 1], [0, 1]], "h": 0.0625, "neighbor_radius": 2},
            "engine": {"eps": 0.1, "C_D": 8, "M_K": 5},
            "params": dict({"K": [[[0.25, 0.75], [0.25, 0.75]]]}, **params)}


def test_distance_pair(tmp_path):
    out = tmp_path / "o"
    assert main(["distance", "--config", write(tmp_path, EUC_PAIR), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    e = rep["summary"]["estimates"][0]
    assert e["lower"] == pytest.approx(1, rel=0.01) and e["upper"] == pytest.approx(1, rel=0.01)
    assert rep["config"]["family"]["name"] == "euclidean"
    assert rep["tool"]["hash"] == version_hash()
    assert (out / "estimates.csv").exists()


def test_constant_compactness_exit0(tmp_path):
    out = tmp_path / "o"
    cfg = compact_cfg(u={"kind": "constant", "value": 2.0})
    assert main(["run", "--config", write(tmp_path, cfg), "--out", str(out)]) == 0
    rep = json.loads((out / "report.json").read_text())
    assert all(s["bound"] == 0 for lv in rep["summary"]["engine"]["levels"] for s in lv["stages"])
    assert (out / "limit.json").exists() and (out / "limit.f64").exists()


def test_mass_injection_exit2(tmp_path, capsys):
    cfg = compact_cfg(u={"kind": "mollified-step", "axis": 0, "offset": 0.5, "width": 0.25}, inject="mass")
    assert main(["compactness", "--config", write(tmp_path, cfg), "--out", str(tmp_path / "o")]) == 2
    assert "(iv)" in capsys.readouterr().err


def test_config_errors_exit1(tmp_path, capsys):
    bad = dict(EUC_PAIR, grid={"box": [[0, 1], [0, 1]], "h": -1})
    p = write(tmp_path, bad)
    assert main(["validate", "--config", p]) == 1
    assert main(["run", "--config", p]) == 1
    assert main(["doubling", "--config", write(tmp_path, EUC_PAIR, "d.json")]) == 1
    assert main(["run", "--config", write(tmp_path, EUC_PAIR, "e.json"), "--seed", str(2 ** 64)]) == 1
    ok = write(tmp_path, EUC_PAIR, "ok.json")
    assert main(["validate", "--config", ok]) == 0
    assert "ok" in capsys.readouterr().out


def test_deterministic_reports_identical(tmp_path):
    cfg = write(tmp_path, {"scenario": "covering", "seed": 11,
                           "params": {"clouds": 3, "points": 60, "dim": 2, "r_max": 0.2}})
    outs = []
    for k in range(2):
        o = tmp_path / f"r{k}"
        assert main(["run", "--config", cfg, "--out", str(o), "--deterministic", "--seed", "99"]) == 0
        outs.append({p.name: p.read_bytes() for p in sorted(o.iterdir())})
    assert outs[0] == outs[1]
    rep = json.loads(outs[0]["report.json"])
    assert rep["config"]["seed"] == 99 and "timings" not in rep


def test_entry_point_and_threads(tmp_path):
    env = dict(os.environ, CCCOMPACT_THREADS="1")
    cfg = write(tmp_path, EUC_PAIR)
    r = subprocess.run([sys.executable, "-m", "cccompact.cli", "run", "--config", cfg, "--out",
                        str(tmp_path / "o")], env=env, capture_output=True, text=True)
    assert r.returncode == 0, r.stderr
    rep = json.loads((tmp_path / "o" / "report.json").read_text())
    assert rep["threads"] == "1"
