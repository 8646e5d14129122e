import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from msfet_e2v.cli import main
from msfet_e2v.events import parse_events
from msfet_e2v.formats import read_pgm, read_voxel

TINY_FLAGS = ["--set", "model.base_channels=8", "--set", "model.embed_dim=64", "--set", "model.heads=4"]


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("gen") / "ds"
    assert main(["gen", "--out", str(out)]) == 0
    return out


def body_lines(path):
    return [l for l in path.read_text().splitlines() if l and not l.startswith("#")]


def test_gen_default_outputs(dataset):
    assert len(list((dataset / "frames").glob("*.pgm"))) == 11
    assert len(list(dataset.glob("events.*"))) == 1
    assert len(list((dataset / "flows").glob("*.flo"))) == 10
    manifest = json.loads((dataset / "manifest.json").read_text())
    assert len(manifest["frame_times"]) == 11
    assert "config seed = 0" in (dataset / "run.log").read_text()


def test_gen_is_reproducible(dataset, tmp_path):
    assert main(["gen", "--out", str(tmp_path / "again")]) == 0
    for f in ["events.txt", "manifest.json", "frames/frame_00007.pgm", "flows/flow_00003.flo"]:
        assert (dataset / f).read_bytes() == (tmp_path / "again" / f).read_bytes()
    assert main(["gen", "--seed", "1", "--out", str(tmp_path / "other")]) == 0
    assert (tmp_path / "other" / "events.txt").read_bytes() != (dataset / "events.txt").read_bytes()


def test_gen_static_and_binary(tmp_path):
    assert main(["gen", "--static", "--out", str(tmp_path / "s")]) == 0
    assert body_lines(tmp_path / "s" / "events.txt") == []
    assert main(["gen", "--format", "binary", "--out", str(tmp_path / "b")]) == 0
    stream = parse_events((tmp_path / "b" / "events.bin").read_bytes(), "binary")
    assert stream.count > 0 and (stream.height, stream.width) == (32, 32)


def test_encode_count_grouping(tmp_path):
    lines = ["# H=4 W=4"] + [f"{0.1 * (i + 1):.1f},{i % 4},{i // 4},{1 if i % 3 else -1}" for i in range(10)]
    (tmp_path / "ev.txt").write_text("\n".join(lines) + "\n")
    assert main(["encode", str(tmp_path / "ev.txt"), "--grouping", "count:4", "--out", str(tmp_path / "vox")]) == 0
    files = sorted((tmp_path / "vox").glob("*.vox"))
    assert len(files) == 2
    pols = [1 if i % 3 else -1 for i in range(10)]
    for k, f in enumerate(files):
        v = read_voxel(f)
        assert v.shape == (5, 4, 4)
        assert abs(v.sum() - sum(pols[4 * k : 4 * k + 4])) <= 1e-6


def test_gen_encode_reconstruct_compose(dataset, tmp_path):
    assert main(["encode", str(dataset / "events.txt"), "--out", str(tmp_path / "vox")]) == 0
    assert len(list((tmp_path / "vox").glob("*.vox"))) == 10
    assert main(["reconstruct", str(tmp_path / "vox"), "--out", str(tmp_path / "r1"), *TINY_FLAGS]) == 0
    assert main(["reconstruct", str(dataset / "events.txt"), "--out", str(tmp_path / "r2"), *TINY_FLAGS]) == 0
    a = sorted((tmp_path / "r1").glob("*.pgm"))
    b = sorted((tmp_path / "r2").glob("*.pgm"))
    assert len(a) == len(b) == 10
    for x, y in zip(a, b):
        img = read_pgm(x)
        assert np.all(np.isfinite(img)) and img.shape == (1, 32, 32)
        assert np.max(np.abs(img - read_pgm(y))) <= 1 / 255 + 1e-9  # voxels went through f32 files
    rows = list(csv.reader(open(tmp_path / "r1" / "timing.csv")))
    assert rows[0] == ["frame_index", "ms"] and len(rows) == 11


def test_reconstruct_is_deterministic(dataset, tmp_path):
    for name in ("a", "b"):
        assert main(["reconstruct", str(dataset / "events.txt"), "--grouping", "duration:50",
                     "--out", str(tmp_path / name), *TINY_FLAGS]) == 0
    files = sorted((tmp_path / "a").glob("*.pgm"))
    assert len(files) == 4
    assert all(f.read_bytes() == (tmp_path / "b" / f.name).read_bytes() for f in files)


def test_train_toy_and_resume(dataset, tmp_path):
    flags = [*TINY_FLAGS, "--unroll", "4"]
    assert main(["train-toy", str(dataset), "--out", str(tmp_path / "full"), "--steps", "4", *flags]) == 0
    assert main(["train-toy", str(dataset), "--out", str(tmp_path / "half"), "--steps", "2", *flags]) == 0
    assert main(["train-toy", str(dataset), "--out", str(tmp_path / "half"), "--steps", "2", "--unroll", "4",
                 "--resume", str(tmp_path / "half" / "weights.wts")]) == 0
    full = list(csv.reader(open(tmp_path / "full" / "loss.csv")))
    half = list(csv.reader(open(tmp_path / "half" / "loss.csv")))
    assert full[0] == half[0] == ["step", "loss"]
    assert [r[0] for r in half[1:]] == ["1", "2", "3", "4"]
    a = np.array([float(r[1]) for r in full[1:]])
    b = np.array([float(r[1]) for r in half[1:]])
    assert np.all(np.isfinite(a))
    assert np.allclose(a, b, rtol=1e-5)


def test_eval(dataset, tmp_path):
    frames = dataset / "frames"
    assert main(["eval", str(frames), str(frames), "--out", str(tmp_path / "m.csv")]) == 0
    rows = list(csv.reader(open(tmp_path / "m.csv")))
    assert rows[0] == ["frame_index", "psnr_db", "ssim"]
    assert rows[-1][0] == "mean" and rows[-1][1] == "inf" and float(rows[-1][2]) == pytest.approx(1.0)
    (tmp_path / "few").mkdir()
    for f in sorted(frames.glob("*.pgm"))[:3]:
        (tmp_path / "few" / f.name).write_bytes(f.read_bytes())
    assert main(["eval", str(tmp_path / "few"), str(frames), "--out", str(tmp_path / "x.csv")]) == 2
    assert main(["eval", str(tmp_path / "few"), str(frames), "--gt-start", "8", "--no-normalize",
                 "--out", str(tmp_path / "y.csv")]) == 0


def test_config_file_and_unknown_key(tmp_path, capsys):
    (tmp_path / "bad.cfg").write_text("model.nope = 3\n")
    assert main(["gen", "--config", str(tmp_path / "bad.cfg"), "--out", str(tmp_path / "g")]) == 2
    assert "unknown config key" in capsys.readouterr().err
    (tmp_path / "ok.cfg").write_text("scene.duration = 0.1  # five frames\nseed = 2\n")
    assert main(["gen", "--config", str(tmp_path / "ok.cfg"), "--out", str(tmp_path / "g")]) == 0
    assert len(list((tmp_path / "g" / "frames").glob("*.pgm"))) == 6
    assert "config scene.duration = 0.1" in (tmp_path / "g" / "run.log").read_text()


def test_selftest_pass_and_fault(capsys):
    assert main(["selftest"]) == 0
    out = capsys.readouterr().out.splitlines()
    assert len([l for l in out if l.startswith("PASS")]) >= 10 and out[-1] == "ALL PASS"
    assert main(["selftest", "--inject-fault", "softmax"]) == 1
    out = capsys.readouterr().out
    assert "FAIL softmax_rows" in out and "PASS wavelet_roundtrip_f32" in out
    assert main(["selftest", "--inject-fault", "voxel_conservation"]) == 1
    assert "FAIL voxel_conservation" in capsys.readouterr().out


def test_bench_report(capsys):
    assert main(["bench", "--set", "bench.repeats=1"]) == 0
    out = capsys.readouterr().out
    assert "parameters: 21,519,809" in out and "16.71M" in out
    for j in (2, 4, 8):
        assert f"cdam{j}" in out
    ms = {int(l.split("x")[0]): float(l.split(":")[1].split("ms")[0]) for l in out.splitlines() if "ms/frame" in l}
    assert ms[64] < ms[128]


def test_console_script_entry():
    r = subprocess.run([sys.executable, "-m", "msfet_e2v.cli", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("gen", "encode", "reconstruct", "train-toy", "eval", "selftest", "bench"):
        assert cmd in r.stdout
