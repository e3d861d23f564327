import json

import pytest

from elp.cli import main

BEAT_CM = {"class_names": ["N", "S", "V", "F", "Q"],
           "counts": [[89774, 203, 357, 37, 91], [757, 1945, 56, 1, 18],
                      [632, 51, 6449, 44, 47], [175, 3, 95, 527, 2],
                      [639, 11, 62, 1, 7314]]}

FAST = ["--k", "4", "--epochs", "1", "--folds", "2"]


def _run(out, *argv):
    return main([argv[0], "--out", str(out), *argv[1:]])


def test_stage_order_error_names_missing_stage(tmp_path, capsys):
    assert _run(tmp_path, "tokenize") == 2
    assert "'segment'" in capsys.readouterr().err


@pytest.fixture(scope="module")
def chain(tmp_path_factory):
    out = tmp_path_factory.mktemp("out")
    assert _run(out, "synth", "--records", "16", "--duration", "6") == 0
    for stage in ("detect", "segment", "build-vocab", "tokenize", "train", "gallery", "evaluate"):
        assert _run(out, stage, *FAST) == 0, stage
    return out


def test_full_chain_writes_manifest(chain):
    manifest = json.loads((chain / "manifest.json").read_text())
    assert set(manifest["latest"]) == {"ingest", "detect", "segment", "build-vocab", "tokenize",
                                       "train", "gallery", "evaluate"}
    for key, entry in manifest["artifacts"].items():
        for up, h in entry["inputs"].items():
            assert f"{up}/{h}" in manifest["artifacts"], key
    ev = manifest["latest"]["evaluate"]
    report = json.loads((chain / "evaluate" / ev / "report.json").read_text())
    assert report["status"] == "complete" and report["metrics"]["total"] == 16
    svg = (chain / "gallery" / manifest["latest"]["gallery"] / "gallery.svg").read_text()
    assert svg.count('<g id="cluster-') == 4


def test_rerun_is_a_noop(chain, caplog):
    before = json.loads((chain / "manifest.json").read_text())
    caplog.set_level("INFO")
    assert _run(chain, "detect") == 0
    assert "up to date" in caplog.text
    after = json.loads((chain / "manifest.json").read_text())
    assert after["artifacts"] == before["artifacts"]


def test_tampered_artifact_is_detected(chain, capsys):
    manifest = json.loads((chain / "manifest.json").read_text())
    peaks = chain / "detect" / manifest["latest"]["detect"] / "peaks.json"
    original = peaks.read_text()
    peaks.write_text(original.replace("[", "[1, ", 1))
    try:
        assert _run(chain, "segment", *FAST) == 2
        assert "does not match" in capsys.readouterr().err
    finally:
        peaks.write_text(original)


def test_report_on_table_v_matrix(tmp_path, capsys):
    path = tmp_path / "cm.json"
    path.write_text(json.dumps(BEAT_CM))
    assert main(["report", str(path), "--json"]) == 0
    metrics = json.loads(capsys.readouterr().out)
    n = metrics["per_class"]["N"]
    assert (n["acc"], n["ppv"], n["sen"], n["spec"]) == (97.35, 97.60, 99.24, 88.30)
    assert main(["report", str(path)]) == 0
    assert "97.35" in capsys.readouterr().out


def test_config_file_then_flags(tmp_path, capsys):
    cfg = tmp_path / "c.toml"
    cfg.write_text('task = "synth"\nk = 5\n[training]\nmax_epochs = 2\n')
    from elp.cli import build_parser, resolve_config
    args = build_parser().parse_args(["build-vocab", "--config", str(cfg), "--out", str(tmp_path)])
    assert resolve_config(args).k == 5 and resolve_config(args).training.max_epochs == 2
    args = build_parser().parse_args(["build-vocab", "--config", str(cfg), "--k", "7",
                                      "--out", str(tmp_path), "--model", "rnn-attn"])
    got = resolve_config(args)
    assert got.k == 7 and got.model == "rnn_attention"
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"kk": 3}))
    assert main(["detect", "--config", str(bad), "--out", str(tmp_path)]) == 2


def test_out_dir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("ELP_OUT", str(tmp_path / "envout"))
    from elp.cli import build_parser
    assert build_parser().parse_args(["detect"]).out == str(tmp_path / "envout")
