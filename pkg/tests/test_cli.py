import json

import pytest

from streetsafety import __version__
from streetsafety.cli import main


@pytest.fixture(scope="module")
def city(tmp_path_factory):
    root = tmp_path_factory.mktemp("city")
    assert main(["simulate", "--out", str(root), "--n-points", "150", "--size", "32", "--bootstrap", "2"]) == 0
    return root


def test_version(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["--version"])
    assert exc.value.code == 0
    assert __version__ in capsys.readouterr().out


def test_help_json_lists_commands(capsys):
    assert main(["--help-json"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert {"extract", "prep", "train", "explain", "causal", "matrix", "simulate", "all"} <= set(doc["commands"])


def test_unknown_stage_is_rejected(city):
    with pytest.raises(SystemExit) as exc:
        main(["all", "--config", str(city / "config.json"), "--stages", "extract,paint"])
    assert exc.value.code == 2


def test_missing_upstream_stage_is_named(city, tmp_path, capsys):
    rc = main(["matrix", "--config", str(city / "config.json"), "--out", str(tmp_path / "empty")])
    assert rc == 2
    assert "extract" in capsys.readouterr().err


def test_missing_config_file(tmp_path, capsys):
    assert main(["extract", "--config", str(tmp_path / "nope.json")]) == 2
    assert "error" in capsys.readouterr().err


def test_rerun_is_byte_identical(city, tmp_path):
    outs = []
    for name in ("a", "b"):
        out = tmp_path / name
        rc = main(["all", "--config", str(city / "config.json"), "--out", str(out),
                   "--stages", "extract,prep,train,explain,causal"])
        assert rc == 0
        outs.append(out)
    files = sorted(p.relative_to(outs[0]) for p in outs[0].rglob("*.csv"))
    assert len(files) > 10
    for rel in files:
        assert (outs[0] / rel).read_bytes() == (outs[1] / rel).read_bytes(), rel
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["seed"] == 0 and manifest["config_hash"]
    assert all(manifest["stages"][s]["status"] == "ok" for s in ("extract", "prep", "train", "explain", "causal"))


def test_seed_override_changes_split(city, tmp_path):
    main(["all", "--config", str(city / "config.json"), "--out", str(tmp_path / "s0"), "--stages", "extract,prep"])
    main(["all", "--config", str(city / "config.json"), "--out", str(tmp_path / "s1"), "--stages", "extract,prep",
          "--seed", "1"])
    assert (tmp_path / "s0" / "test.csv").read_bytes() != (tmp_path / "s1" / "test.csv").read_bytes()
    assert json.loads((tmp_path / "s1" / "manifest.json").read_text())["seed"] == 1
