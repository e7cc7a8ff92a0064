import json
import subprocess
import sys

import pytest

from srb import __version__
from srb.cli import config_hash, main

EX51 = {"maps": [{"kind": "power", "beta": 2.0}, {"kind": "power", "beta": 0.5}], "p": [0.4, 0.6]}
MARKET = {"K": 2, "L": 2, "D": [[1, 0], [0, 1]], "p": [0.5, 0.5],
          "strategies": [[0.5, 0.5], [0.3, 0.7]], "w0": [1, 1]}


def run(tmp_path, argv, cfg=None, out="out"):
    if cfg is not None:
        (tmp_path / "cfg.json").write_text(json.dumps(cfg))
        argv = argv + ["--config", str(tmp_path / "cfg.json")]
    return main(argv + ["--out", str(tmp_path / out)])


def artifacts(path):
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())}


def test_classify_success(tmp_path, capsys):
    assert run(tmp_path, ["classify"], EX51) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["artifacts"] == ["g_d.edgelist", "g_u.edgelist", "classify.json"]
    body = json.loads((tmp_path / "out" / "classify.json").read_text())
    cands = {c["measure"]: c["status"] for c in body["candidates"]}
    assert cands["delta_1"] == "SRB" and cands["delta_0"] == "NotSRB"
    assert body["provenance"] == {"config_hash": summary["config_hash"], "version": __version__}


def test_bad_probabilities_exit_2(tmp_path, capsys):
    assert run(tmp_path, ["classify"], dict(EX51, p=[0.4, 0.5])) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["error"] == "validation" and err["field"] == "p" and "sum to 1" in err["message"]


def test_identity_map_exit_2(tmp_path, capsys):
    cfg = {"maps": [{"kind": "market", "R": [1, 0], "lambda1": [0.5, 0.5],
                     "lambda2": [0.5, 0.5]}], "p": [1.0]}
    assert run(tmp_path, ["classify"], cfg) == 2
    assert "degenerate fixed set" in json.loads(capsys.readouterr().err)["message"]


@pytest.mark.parametrize("cfg,field", [
    ({"p": [1.0]}, "maps"),
    ({"maps": [{"kind": "spline"}], "p": [1.0]}, "maps[0]"),
    ({"maps": [{"kind": "power", "beta": 2.0}], "p": [0.5, 0.5]}, "p"),
])
def test_config_field_errors(tmp_path, capsys, cfg, field):
    assert run(tmp_path, ["classify"], cfg) == 2
    assert json.loads(capsys.readouterr().err)["field"] == field


def test_unreadable_config_and_bad_flags(tmp_path, capsys):
    (tmp_path / "cfg.json").write_text("{not json")
    assert main(["classify", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path)]) == 2
    assert json.loads(capsys.readouterr().err)["field"] == "config"
    assert run(tmp_path, ["simulate", "--steps", "0"], EX51) == 2
    with pytest.raises(SystemExit):
        main(["example", "ex9.9"])


def test_market_validation(tmp_path, capsys):
    assert run(tmp_path, ["market", "--steps", "50", "--paths", "2"],
               dict(MARKET, strategies=[[1.0, 0.0], [0.3, 0.7]])) == 2
    assert run(tmp_path, ["market"], dict(MARKET, K=3)) == 2
    assert run(tmp_path, ["market"], {k: v for k, v in MARKET.items() if k != "D"}) == 2


def test_consistency_error_exit_3(tmp_path, capsys, monkeypatch):
    from srb import cli
    from srb.classifier import ConsistencyError

    def boom(*a, **k):
        raise ConsistencyError("conflicting rules")

    monkeypatch.setattr(cli, "classify", boom)
    assert run(tmp_path, ["classify"], EX51) == 3
    assert json.loads(capsys.readouterr().err)["error"] == "consistency"


def test_flags_override_config(tmp_path, capsys):
    assert run(tmp_path, ["simulate", "--steps", "30", "--paths", "3"],
               dict(EX51, steps=999, paths=7)) == 0
    body = json.loads((tmp_path / "out" / "simulate.json").read_text())
    assert body["T"] == 30 and body["paths"] == 3 and body["config"]["steps"] == 30
    lines = (tmp_path / "out" / "orbit.csv").read_text().splitlines()
    assert lines[0].startswith("# srb ") and lines[1] == "t,symbol,state" and len(lines) == 2 + 31


COMMANDS = [
    (["simulate", "--steps", "200", "--paths", "5"], EX51),
    (["classify"], EX51),
    (["basin", "--steps", "300", "--paths", "3", "--grid", "7"], EX51),
    (["market", "--steps", "200", "--paths", "4"], MARKET),
    (["arcsine", "--paths", "50"], {"levels": [10, 100]}),
    (["example", "ex3.4", "--steps", "500", "--paths", "3", "--grid", "13"], None),
    (["example", "ex5.1", "--steps", "500", "--paths", "10", "--p1", "0.6"], None),
    (["example", "kelly-demo", "--steps", "500", "--paths", "4"], None),
]


@pytest.mark.parametrize("argv,cfg", COMMANDS, ids=lambda x: x[0] if isinstance(x, list) else "")
def test_artifacts_deterministic_with_provenance(tmp_path, capsys, argv, cfg):
    assert run(tmp_path, argv, cfg, out="a") == 0
    h = json.loads(capsys.readouterr().out)["config_hash"]
    assert run(tmp_path, argv, cfg, out="b") == 0
    a, b = artifacts(tmp_path / "a"), artifacts(tmp_path / "b")
    assert a == b and a
    for name, blob in a.items():
        text = blob.decode("utf-8")
        if name.endswith(".json"):
            assert json.loads(text)["provenance"] == {"config_hash": h, "version": __version__}
        else:
            assert text.startswith(f"# srb {__version__} config_hash={h}\n")


def test_seed_changes_artifacts(tmp_path, capsys):
    argv = ["simulate", "--steps", "100", "--paths", "2"]
    run(tmp_path, argv + ["--seed", "1"], EX51, out="a")
    run(tmp_path, argv + ["--seed", "2"], EX51, out="b")
    assert (tmp_path / "a" / "orbit.csv").read_bytes() != (tmp_path / "b" / "orbit.csv").read_bytes()


def test_config_hash_ignores_key_order():
    assert config_hash({"a": 1, "b": [1, 2]}) == config_hash({"b": [1, 2], "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})


def test_example_reports(tmp_path, capsys):
    assert main(["example", "ex5.1", "--steps", "2000", "--paths", "20", "--p1", "0.4",
                 "--out", str(tmp_path / "e")]) == 0
    body = json.loads((tmp_path / "e" / "example.json").read_text())
    assert all(c["holds"] for c in body["checks"])
    assert body["checks"][0]["claim"] == "delta_1 is the unique SRB measure"
    summary = (tmp_path / "e" / "summary.txt").read_text().splitlines()
    assert summary[1:] == ["ok   delta_1 is the unique SRB measure",
                           "ok   >= 99% of orbits end within 1e-6 of 1"]
    assert main(["example", "ex3.4", "--steps", "2000", "--paths", "10", "--grid", "13",
                 "--out", str(tmp_path / "f")]) == 0
    body = json.loads((tmp_path / "f" / "example.json").read_text())
    assert [c["holds"] for c in body["checks"][:4]] == [True] * 4
    assert (tmp_path / "f" / "basin_0.csv").exists() and (tmp_path / "f" / "basin_1.csv").exists()


def test_console_script_entry_point(tmp_path):
    res = subprocess.run([sys.executable, "-m", "srb.cli", "classify", "--out", str(tmp_path)],
                         capture_output=True, text=True)
    assert res.returncode == 2 and json.loads(res.stderr)["field"] == "maps"
