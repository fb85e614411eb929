import json
import os

import pytest

from rungelab.cli import main, parse_config
from rungelab.errors import ConfigurationError


def _write(tmp_path, name, payload):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


QUICK_VERIFY = {
    "tag": "verify_solver",
    "grid": {"n": [4, 4, 4], "h": 0.25},
    "omega": 2.0,
    "verify": {"levels": 2},
    "tolerances": {"convergence_order": 1.5},
}


def test_parse_config_malformed():
    with pytest.raises(ConfigurationError) as err:
        parse_config("{\"tag\": }")
    assert "line" in str(err.value)


def test_parse_config_invariants():
    with pytest.raises(ConfigurationError) as err:
        parse_config(json.dumps({"tag": "runge", "exponents": {"q": 3.0, "q0": 2.5}}))
    assert "q0" in str(err.value)


def test_run_verify_exit_zero(tmp_path, capsys):
    cfg = _write(tmp_path, "v.json", QUICK_VERIFY)
    out = str(tmp_path / "out")
    code = main(["--out", out, "verify", cfg])
    assert code == 0
    assert os.path.exists(os.path.join(out, "verify_solver.csv"))
    assert os.path.exists(os.path.join(out, "verify_solver.json"))
    text = capsys.readouterr().out
    assert "PASS" in text


def test_run_exit_two_on_tolerance(tmp_path):
    impossible = dict(QUICK_VERIFY)
    impossible["tolerances"] = {"convergence_order": 99.0}
    cfg = _write(tmp_path, "v.json", impossible)
    code = main(["--out", str(tmp_path / "out"), "run", cfg])
    assert code == 2


def test_run_exit_one_on_malformed(tmp_path, capsys):
    path = tmp_path / "bad.json"
    path.write_text("{not json")
    code = main(["--out", str(tmp_path / "out"), "run", str(path)])
    assert code == 1
    assert "error" in capsys.readouterr().err


def test_run_exit_one_on_bad_field(tmp_path, capsys):
    cfg = _write(tmp_path, "bad.json", {"tag": "runge", "exponents": {"q0": 2.0}})
    code = main(["--out", str(tmp_path / "out"), "run", str(cfg)])
    assert code == 1
    assert "q0" in capsys.readouterr().err


def test_rerun_byte_identical(tmp_path):
    cfg_payload = {
        "tag": "three_balls",
        "grid": {"n": [8, 8, 8], "h": 0.125},
        "three_balls": {"n_samples": 5, "seed": 0},
    }
    cfg = _write(tmp_path, "t.json", cfg_payload)
    out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    assert main(["--out", out1, "run", cfg]) in (0, 2)
    assert main(["--out", out2, "run", cfg]) in (0, 2)
    a = open(os.path.join(out1, "three_balls.csv"), "rb").read()
    b = open(os.path.join(out2, "three_balls.csv"), "rb").read()
    assert a == b


def test_cache_commands(tmp_path, capsys):
    cache = str(tmp_path / "cache")
    assert main(["--cache", cache, "cache", "ls"]) == 0
    os.makedirs(cache, exist_ok=True)
    from rungelab import store
    store.write_envelope(os.path.join(cache, "x.rgfo"), "operator", 42, b"payload")
    assert main(["--cache", cache, "cache", "ls"]) == 0
    out = capsys.readouterr().out
    assert "operator" in out
    assert main(["--cache", cache, "cache", "rm"]) == 0
    assert os.listdir(cache) == []


def test_seed_override(tmp_path):
    cfg_payload = {
        "tag": "three_balls",
        "grid": {"n": [8, 8, 8], "h": 0.125},
        "three_balls": {"n_samples": 5},
    }
    cfg = _write(tmp_path, "t.json", cfg_payload)
    out1, out2 = str(tmp_path / "s1"), str(tmp_path / "s2")
    main(["--out", out1, "--seed", "1", "run", cfg])
    main(["--out", out2, "--seed", "2", "run", cfg])
    a = json.load(open(os.path.join(out1, "three_balls.json")))
    b = json.load(open(os.path.join(out2, "three_balls.json")))
    assert a["config"]["seed"] == 1
    assert b["config"]["seed"] == 2


def test_runge_cache_roundtrip_via_cli(tmp_path):
    payload = {
        "tag": "runge",
        "grid": {"n": [8, 8, 8], "h": 0.125},
        "regions": {"A": {"kind": "ball", "center": [0.35, 0.5, 0.5], "r": 0.18}},
        "runge": {"js": [1, 2, 3], "m": 3.0,
                  "target": {"kind": "dipole", "x0": [0.82, 0.5, 0.5], "m": [0, 0, 1.0]}},
    }
    cfg = _write(tmp_path, "r.json", payload)
    cache = str(tmp_path / "cache")
    out1, out2 = str(tmp_path / "o1"), str(tmp_path / "o2")
    assert main(["--out", out1, "--cache", cache, "run", cfg]) in (0, 2)
    cached = [n for n in os.listdir(cache) if n.endswith(".rgfo")]
    assert len(cached) == 1
    assert main(["--out", out2, "--cache", cache, "run", cfg]) in (0, 2)
    a = open(os.path.join(out1, "runge.csv"), "rb").read()
    b = open(os.path.join(out2, "runge.csv"), "rb").read()
    assert a == b
