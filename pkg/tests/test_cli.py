import subprocess
import sys

import numpy as np
import pytest

from bigru_eeg.cli import main
from bigru_eeg.config import load_config
from bigru_eeg.dataio import DEFAULT_CHANNELS, write_recording, EegRecording
from bigru_eeg.dsp import load_split

TINY = """
[seeds]
global = 11

[synth]
n_recordings = 10
duration_s = 1.5

[arch]
hidden = 4,4,2
dense = 8,4

[train]
max_epochs = 1
batch_size = 16
k_folds = 2
"""


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text(TINY)
    return str(p)


def run(*args):
    return main([str(a) for a in args])


@pytest.fixture
def pipeline_dirs(tmp_path, cfg):
    assert run("synth", "--config", cfg, "--out", tmp_path / "synth") == 0
    assert run("preprocess", "--config", cfg, "--manifest", tmp_path / "synth/manifest.csv",
               "--out", tmp_path / "data") == 0
    return tmp_path


def test_synth_outputs_and_reproducible(tmp_path, cfg):
    assert run("synth", "--config", cfg, "--out", tmp_path / "a") == 0
    assert run("synth", "--config", cfg, "--out", tmp_path / "b") == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.csv"))
    assert len(files) == 11
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    assert (tmp_path / "a/resolved_config.ini").exists()
    assert not (tmp_path / "a/.lock").exists()
    resolved = load_config(tmp_path / "a/resolved_config.ini")
    assert resolved.global_seed == 11 and resolved.seed_overrides


def test_invalid_synth_spec_exit_code(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[synth]\nn_recordings = 0\n")
    assert run("synth", "--config", p, "--out", tmp_path / "o") == 2


def test_unknown_key_exit_code(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[train]\nwarmup = 3\n")
    assert run("synth", "--config", p, "--out", tmp_path / "o") == 2


def test_preprocess_report_and_modes(pipeline_dirs, cfg):
    d = pipeline_dirs
    report = (d / "data/pipeline_report.txt").read_text()
    for stage in ("filter", "window", "balance", "augment", "split_train", "split_test"):
        assert stage in report
    assert run("preprocess", "--config", cfg, "--manifest", d / "synth/manifest.csv",
               "--out", d / "faithful", "--mode", "paper_faithful") == 0
    a = load_split(d / "data/dataset.bga")
    b = load_split(d / "faithful/dataset.bga")
    assert a.report.mode == "leak_safe" and b.report.mode == "paper_faithful"
    assert a.report.to_kv() != b.report.to_kv()
    assert any(s.augmented for s in b.test)
    assert not any(s.augmented for s in a.test)


def test_missing_manifest_vs_data_error(tmp_path, cfg):
    assert run("preprocess", "--config", cfg, "--manifest", tmp_path / "none.csv", "--out", tmp_path / "o") == 3
    (tmp_path / "m").mkdir()
    (tmp_path / "m/r.csv").write_text("F3,FC5\n1,2\n")
    (tmp_path / "m/manifest.csv").write_text("subject_id,run_id,path,label\nS0,R0,r.csv,0\n")
    assert run("preprocess", "--config", cfg, "--manifest", tmp_path / "m/manifest.csv", "--out", tmp_path / "o2") == 4


def test_lock_conflict(tmp_path, cfg):
    (tmp_path / "o").mkdir()
    (tmp_path / "o/.lock").write_text("123")
    assert run("synth", "--config", cfg, "--out", tmp_path / "o") == 3


def test_train_one_epoch_per_fold_and_deterministic(pipeline_dirs, cfg):
    d = pipeline_dirs
    for out in ("m1", "m2"):
        assert run("train", "--config", cfg, "--dataset", d / "data/dataset.bga", "--out", d / out) == 0
    for name in ("history_fold1.csv", "history_fold2.csv", "history_final.csv"):
        lines = (d / "m1" / name).read_text().splitlines()
        assert len(lines) == 2
        assert (d / "m1" / name).read_bytes() == (d / "m2" / name).read_bytes()
    assert (d / "m1/model.ckpt").read_bytes() == (d / "m2/model.ckpt").read_bytes()


def test_evaluate_and_predict(pipeline_dirs, cfg, capsys):
    d = pipeline_dirs
    assert run("train", "--config", cfg, "--dataset", d / "data/dataset.bga", "--out", d / "m") == 0
    assert run("evaluate", "--config", cfg, "--checkpoint", d / "m/model.ckpt",
               "--dataset", d / "data/dataset.bga", "--out", d / "e") == 0
    for name in ("report.txt", "metrics.kv", "confusion.csv", "history.csv"):
        assert (d / "e" / name).exists()
    assert len((d / "e/history.csv").read_text().splitlines()) == 2

    rec = sorted((d / "synth/recordings").glob("*.csv"))[0]
    capsys.readouterr()
    assert run("predict", "--config", cfg, "--checkpoint", d / "m/model.ckpt", "--recording", rec) == 0
    first = capsys.readouterr().out
    assert run("predict", "--config", cfg, "--checkpoint", d / "m/model.ckpt", "--recording", rec) == 0
    assert capsys.readouterr().out == first
    lines = first.splitlines()
    assert lines[0] == "window,start,p_truth,p_lie,label"
    assert len(lines) == 2 + 5  # 192 samples -> 5 windows
    assert "majority vote" in lines[-1]


def test_predict_short_recording(pipeline_dirs, cfg):
    d = pipeline_dirs
    assert run("train", "--config", cfg, "--dataset", d / "data/dataset.bga", "--out", d / "m") == 0
    short = EegRecording("s", "r", 0, np.random.default_rng(0).standard_normal((40, 13)), DEFAULT_CHANNELS)
    write_recording(short, d / "short.csv")
    assert run("predict", "--config", cfg, "--checkpoint", d / "m/model.ckpt", "--recording", d / "short.csv") == 4


def test_evaluate_arch_mismatch(pipeline_dirs, cfg, tmp_path):
    d = pipeline_dirs
    assert run("train", "--config", cfg, "--dataset", d / "data/dataset.bga", "--out", d / "m") == 0
    other = tmp_path / "other.ini"
    other.write_text(TINY.replace("hidden = 4,4,2", "hidden = 4,8,2"))
    assert run("evaluate", "--config", other, "--checkpoint", d / "m/model.ckpt",
               "--dataset", d / "data/dataset.bga", "--out", d / "e") == 3


def test_module_entry_point(tmp_path, cfg):
    proc = subprocess.run([sys.executable, "-m", "bigru_eeg", "synth", "--config", cfg, "--out", str(tmp_path / "s")],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "bigru_eeg", "synth", "--out", "x"], capture_output=True, text=True)
    assert proc.returncode == 2
