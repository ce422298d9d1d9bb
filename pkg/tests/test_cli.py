import json
import subprocess
import sys

import pytest


def _cli(*args, check=True):
    proc = subprocess.run([sys.executable, "-m", "riderwatch", *map(str, args)], capture_output=True, text=True)
    if check:
        assert proc.returncode == 0, proc.stderr
    return proc


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    d = tmp_path_factory.mktemp("corpus")
    _cli("synth", "--ground-truth", d / "gt.jsonl", "--detections", d / "det.jsonl", "--n-scenes", 2,
         "--n-frames", 12, "--n-instances", 3, "--jitter", 1.0, "--occlusion", 0.2, "--seed", 4)
    return d


def test_synth_is_seeded(corpus, tmp_path):
    _cli("synth", "--ground-truth", tmp_path / "gt.jsonl", "--n-scenes", 2, "--n-frames", 12,
         "--n-instances", 3, "--jitter", 1.0, "--occlusion", 0.2, "--seed", 4)
    assert (tmp_path / "gt.jsonl").read_bytes() == (corpus / "gt.jsonl").read_bytes()
    assert len((corpus / "det.jsonl").read_text().splitlines()) == 24


def test_train_fill_run_eval(corpus, tmp_path):
    _cli("train-trapezium", "--data", corpus / "gt.jsonl", "--out", tmp_path / "trap.json", "--epochs", 3,
         "--learning-rate", 0.01, "--augment-copies", 1)
    _cli("train-amodal", "--data", corpus / "gt.jsonl", "--out", tmp_path / "amodal.json", "--epochs", 3)
    assert json.loads((tmp_path / "trap.json").read_text())["meta"]["kind"] == "trapezium"
    _cli("fill-amodal", "--detections", corpus / "det.jsonl", "--amodal-model", tmp_path / "amodal.json",
         "--out", tmp_path / "filled.jsonl")
    before = sum(line.count('"rider"') for line in (corpus / "det.jsonl").read_text().splitlines())
    after = sum(line.count('"rider"') for line in (tmp_path / "filled.jsonl").read_text().splitlines())
    assert after >= before
    _cli("run", "--detections", tmp_path / "filled.jsonl", "--trap-model", tmp_path / "trap.json",
         "--report", tmp_path / "report.json", "--overlay", tmp_path / "overlay.jsonl")
    report = json.loads((tmp_path / "report.json").read_text())
    assert set(report["videos"]) == {"scene00000", "scene00001"}
    assert report["input_errors"] == 0
    assert len((tmp_path / "overlay.jsonl").read_text().splitlines()) == 24
    _cli("eval", "--ground-truth", corpus / "gt.jsonl", "--detections", corpus / "det.jsonl",
         "--modes", "moto_box_iou,trapezium_iou", "--out", tmp_path / "scores.json")
    scores = json.loads((tmp_path / "scores.json").read_text())
    assert list(scores) == ["moto_box_iou", "trapezium_iou"]


def test_run_with_config_writes_report_to_stdout(corpus, tmp_path):
    (tmp_path / "c.cfg").write_text("violation_min_frames = 1\nmin_hits = 1\n")
    proc = _cli("run", "--detections", corpus / "det.jsonl", "--config", tmp_path / "c.cfg")
    doc = json.loads(proc.stdout)
    assert doc["videos"]["scene00000"]["settings"]["min_hits"] == 1


def test_malformed_stream_continues_and_fails(corpus, tmp_path):
    lines = (corpus / "det.jsonl").read_text().splitlines()
    lines.insert(3, "{broken")
    bad = tmp_path / "bad.jsonl"
    bad.write_text("\n".join(lines) + "\n")
    proc = _cli("run", "--detections", bad, "--report", tmp_path / "r.json", check=False)
    assert proc.returncode == 1
    assert "line 4" in proc.stderr
    assert json.loads((tmp_path / "r.json").read_text())["input_errors"] == 1


@pytest.mark.parametrize("args", [
    ["run", "--detections", "/nonexistent.jsonl"],
    ["run", "--detections", "{det}", "--trap-model", "{det}"],
    ["run", "--detections", "{det}", "--config", "{det}"],
    ["synth", "--ground-truth", "{tmp}/x.jsonl", "--n-instances", "40"],
])
def test_bad_inputs_exit_nonzero(corpus, tmp_path, args):
    args = [a.format(det=corpus / "det.jsonl", tmp=tmp_path) for a in args]
    proc = _cli(*args, check=False)
    assert proc.returncode == 2
    assert proc.stderr.startswith("error: ")


def test_threads_and_seed_flags_accepted(corpus, tmp_path):
    for sub in ("run", "eval"):
        extra = ["--ground-truth", corpus / "gt.jsonl"] if sub == "eval" else []
        _cli(sub, "--detections", corpus / "det.jsonl", *extra, "--threads", 1, "--seed", 3)
