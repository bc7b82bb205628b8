import json
import subprocess
import sys

import pytest

from semges.cli import file_sha256, main


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr().out.strip().splitlines()
    return code, json.loads(out[-1])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Synthesise, train both stages briefly, generate and keep the paths."""
    d = tmp_path_factory.mktemp("cli")
    p = {k: d / v for k, v in {
        "data": "data.sgds", "hands": "hands.sgck", "body": "body.sgck",
        "gen": "gen.sgck", "motion": "motion.sgds", "report": "report.json",
    }.items()}
    echoes = {}

    def call(name, *argv):
        code = main([str(a) for a in argv])
        assert code == 0, name
        echoes[name] = argv

    call("synth", "synth", "--out", p["data"], "--clips", 32, "--speakers", 2, "--seed", 1)
    for part in ("hands", "body"):
        call(part, "train-prior", "--data", p["data"], "--part", part, "--steps", 10, "--out", p[part])
    call("gen", "train-gen", "--data", p["data"], "--prior-hands", p["hands"], "--prior-body", p["body"],
         "--steps", 5, "--out", p["gen"])
    call("generate", "generate", "--model", p["gen"], "--features", p["data"], "--out", p["motion"])
    return p


def test_pipeline_eval_reports_all_metrics(pipeline, capsys):
    p = pipeline
    code, echo = run(capsys, "eval", "--real", p["data"], "--gen", p["motion"], "--model", p["gen"],
                     "--report", p["report"])
    assert code == 0
    report = json.loads(p["report"].read_text())
    assert {"fgd", "bc", "diversity", "srgr"} <= set(report)
    assert report["fgd"] >= 0 and 0 <= report["bc"] <= 1 and 0 <= report["srgr"] <= 1
    assert echo["outputs"] == {str(p["report"]): file_sha256(p["report"])}


def test_echo_replays_to_identical_outputs(pipeline, capsys, tmp_path):
    p = pipeline
    out = tmp_path / "again.sgds"
    code, echo = run(capsys, "generate", "--model", p["gen"], "--features", p["data"], "--out", out)
    assert code == 0
    out.unlink()
    code, replay = run(capsys, *echo["argv"])
    assert code == 0 and replay["outputs"] == echo["outputs"]


def test_srgr_refused_without_annotations(pipeline, capsys, tmp_path):
    bare = tmp_path / "bare.sgds"
    assert main(["synth", "--out", str(bare), "--clips", "8", "--speakers", "2", "--no-relevance"]) == 0
    capsys.readouterr()
    code, err = run(capsys, "eval", "--real", bare, "--gen", pipeline["motion"], "--metrics", "srgr")
    assert code == 2
    assert err["error"] == "refused" and "relevance" in err["message"]


def test_missing_file_is_a_json_error(capsys, tmp_path):
    code, err = run(capsys, "train-prior", "--data", tmp_path / "absent.sgds", "--part", "hands",
                    "--out", tmp_path / "x.sgck")
    assert code == 1 and err["error"] == "FileNotFoundError"


def test_unknown_clip_id_is_refused(pipeline, capsys, tmp_path):
    code, err = run(capsys, "generate", "--model", pipeline["gen"], "--features", pipeline["data"],
                    "--clip-ids", "clip99999", "--out", tmp_path / "m.sgds")
    assert code == 2 and "clip99999" in err["message"]


def test_fgd_needs_model(pipeline, capsys):
    code, err = run(capsys, "eval", "--real", pipeline["data"], "--gen", pipeline["motion"], "--metrics", "fgd")
    assert code == 2


def test_concat_csv_export(pipeline, capsys, tmp_path):
    data = pipeline["data"]
    from semges.data import read_dataset

    ids = [s.clip_id for s in read_dataset(data).samples if s.features.speaker_id == 0][:3]
    out = tmp_path / "long.csv"
    code, echo = run(capsys, "generate", "--model", pipeline["gen"], "--features", data,
                     "--clip-ids", *ids, "--concat", "--format", "csv", "--out", out)
    assert code == 0
    assert echo["sequences"]["stream"] == len(out.read_text().splitlines()) - 1


def test_gradcheck_console_script():
    proc = subprocess.run(
        [sys.executable, "-m", "semges.cli", "gradcheck", "--module", "tensor", "--seeds", "1"],
        capture_output=True, text=True, check=False,
    )
    assert proc.returncode == 0, proc.stdout + proc.stderr
    echo = json.loads(proc.stdout.strip().splitlines()[-1])
    assert echo["passed"] and echo["negative_control"]["detected"]
    assert "PASS" in proc.stderr
