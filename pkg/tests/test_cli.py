import json

import pytest

from meshtrace.cli import build_parser

from helpers import cli_chain, run


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    root = tmp_path_factory.mktemp("chain")
    return root, cli_chain(root, threads=1)


def test_chain_writes_every_artifact(chain):
    root, files = chain
    for rel in ("data/summary.json", "tracked.jsonl", "mean.obj", "model.mtck", "train.csv",
                "preds/predictions.jsonl", "report.json"):
        assert rel in files
    report = json.loads((root / "report.json").read_text())
    assert {"box", "mask", "mesh"} <= set(report["ap"]["all"])
    tracked = [json.loads(ln) for ln in (root / "tracked.jsonl").read_text().splitlines()]
    assert {r["track_id"] for r in tracked} == {0}
    assert (root / "train.csv").read_text().count("\n") == 1 + 3 + 2


def test_chain_is_reproducible_with_threads(chain, tmp_path):
    _, files = chain
    assert cli_chain(tmp_path, threads=4) == files


def test_ground_truth_as_predictions_scores_one(chain, capsys):
    root, _ = chain
    assert run("eval", root / "data", root / "data", "--samples", 2000, "--splits", "all",
               "--out", root / "self.json") == 0
    report = json.loads((root / "self.json").read_text())
    for kind in ("box", "mask", "mesh"):
        assert report["ap"]["all"][kind]["mean"] == pytest.approx(1.0)


def error_of(capsys):
    lines = capsys.readouterr().err.strip().splitlines()
    return json.loads(lines[-1])


def test_missing_input_is_usage_error(tmp_path, capsys):
    assert run("meanshape", tmp_path / "nope", "--class", 0, "--out", tmp_path / "m.obj") == 2
    err = error_of(capsys)
    assert err["exit"] == 2 and "not found" in err["message"]


def test_bad_flags_exit_two(capsys):
    assert run("train") == 2
    assert run("eval", "a", "b", "--tau", "-1") == 2
    assert run("frobnicate") == 2


def test_malformed_detections(tmp_path, capsys):
    p = tmp_path / "dets.jsonl"
    p.write_text('{"frame_id": "c:00000", "box": [0, 0, 1, 1], "class": 0}\n{"box": [0, 0, 1, 1]}\n')
    assert run("track", p) == 2
    err = error_of(capsys)
    assert err["error"] == "ManifestError" and "line 2" in err["message"]


def test_bad_spec(tmp_path, capsys):
    p = tmp_path / "spec.json"
    p.write_text('{"suite": "spiral"}')
    assert run("gen", p, "--out", tmp_path / "d") == 2
    assert "spiral" in error_of(capsys)["message"]
    p.write_text("{")
    assert run("gen", p, "--out", tmp_path / "d") == 2


def test_bad_training_config(chain, tmp_path, capsys):
    root, _ = chain
    cfg = tmp_path / "cfg.json"
    cfg.write_text('{"momentum": 1.5}')
    assert run("train", root / "data", "--config", cfg, "--out", tmp_path / "m.mtck") == 2
    assert error_of(capsys)["error"] == "ConfigurationError"


def test_every_subcommand_has_seed_and_threads():
    parser = build_parser()
    sub = next(a for a in parser._actions if a.dest == "command")
    for name, p in sub.choices.items():
        flags = {s for a in p._actions for s in a.option_strings}
        assert {"--seed", "--threads"} <= flags, name
