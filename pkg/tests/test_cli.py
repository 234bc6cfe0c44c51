import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from viton import cli, files
from viton.report import parse_record

TOY_SETTINGS = ["--set", "width_multiplier=0.0625", "--set", "perception_width=0.0625",
                "--set", "refine_filters=4", "--set", "coarse_steps=3", "--set", "refine_steps=2",
                "--set", "batch_size=2"]


def run(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr().out
    return code, [parse_record(line) for line in out.splitlines() if line.strip()]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    return tmp_path_factory.mktemp("cli")


def test_full_workflow(capsys, workspace, monkeypatch):
    data, work = workspace / "data", workspace / "work"
    cfg = workspace / "run.cfg"
    cfg.write_text(f"data_dir = {data}\nwork_dir = {work}\nseed = 2\n", encoding="utf-8")
    common = ["--config", cfg, *TOY_SETTINGS]

    code, recs = run(capsys, "gen-fixtures", "--count", 3, "--seed", 7, "--out", data)
    assert code == 0 and recs[-1]["count"] == 3

    code, recs = run(capsys, "prepare", *common)
    assert code == 0 and recs[-1]["event"] == "prepared"
    assert len(list((work / "prepared").glob("*.npz"))) == 3

    monkeypatch.setenv("VITON_LOG_LEVEL", "DEBUG")
    code = cli.main([str(a) for a in ("train-coarse", *common)])
    captured = capsys.readouterr()
    recs = [parse_record(line) for line in captured.out.splitlines() if line.strip()]
    assert code == 0 and [r["step"] for r in recs if "step" in r] == [1, 2, 3]
    assert "DEBUG viton.pipeline: stage=coarse step=1" in captured.err
    monkeypatch.setenv("VITON_LOG_LEVEL", "WARNING")
    figures = [Path(r["figure"]) for r in recs if "figure" in r]
    assert figures and all(f.exists() for f in figures)

    code, recs = run(capsys, "train-refine", *common)
    assert code == 0 and (work / "refine.ckpt").exists()

    code, recs = run(capsys, "infer", *common, "--out", workspace / "infer")
    assert code == 0
    samples = [r for r in recs if "sample" in r]
    assert len(samples) == 3
    final = files.read_image(Path(samples[0]["out"]) / "final.png")
    assert final.shape == (64, 64, 3)
    assert np.load(Path(samples[0]["out"]) / "representation.npy").shape == (22, 64, 64)

    code, recs = run(capsys, "eval", *common, "--set", "pairing=shuffled", "--panels", 1)
    summary = recs[-1]
    assert code == 0 and summary["event"] == "summary" and summary["count"] == 3
    assert summary["pairing"] == "shuffled"
    assert all(Path(r["figure"]).exists() for r in recs if "figure" in r)


def test_warp_command(capsys, tmp_path):
    product = np.ones((64, 64, 3), np.float32)
    product[16:48, 20:44] = (0.2, 0.5, 0.7)
    mask = np.zeros((64, 64), np.float32)
    mask[14:50, 16:48] = 1.0
    files.write_image(tmp_path / "c.png", product)
    files.write_mask(tmp_path / "m.png", mask)
    code, recs = run(capsys, "warp", "--product", tmp_path / "c.png", "--mask", tmp_path / "m.png",
                     "--output", tmp_path / "w.png", "--points", 32)
    assert code == 0 and (tmp_path / "w.png").exists()
    assert recs[0]["points"] == 32 and recs[0]["target_area"] == 36 * 32
    assert Path(recs[1]["figure"]).exists()


def test_gradcheck_command(capsys):
    code, recs = run(capsys, "gradcheck", "--seeds", 2, "--case", "elementwise", "--case", "tv_norm")
    assert code == 0
    assert [r["case"] for r in recs[:2]] == ["elementwise", "tv_norm"]
    assert recs[-1]["passed"] == 1


def test_missing_inputs_exit_with_two(capsys, tmp_path):
    code, recs = run(capsys, "train-coarse", "--work", tmp_path / "empty")
    assert code == 2 and recs[-1]["event"] == "error"


def test_bad_override_exits_with_two(capsys, tmp_path):
    code, recs = run(capsys, "prepare", "--set", "height=65", "--work", tmp_path)
    assert code == 2 and "divisible" in recs[-1]["message"]


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "viton", "gen-fixtures", "--count", "1",
                           "--out", str(tmp_path)], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "event=fixtures" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "viton", "--help"], capture_output=True, text=True)
    for name in ("gen-fixtures", "prepare", "train-coarse", "train-refine", "infer", "warp",
                 "eval", "gradcheck"):
        assert name in proc.stdout
