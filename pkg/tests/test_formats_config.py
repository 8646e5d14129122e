import logging
import math
import struct

import numpy as np
import pytest

from msfet_e2v.config import RunConfig, RunConfigError, parse_config_text, parse_grouping
from msfet_e2v.evaluation import frame_metrics, minmax
from msfet_e2v.formats import (
    METRICS_HEADER, FormatError, quantize, read_flow, read_pgm, read_voxel, write_flow, write_metrics_csv,
    write_pgm, write_voxel,
)


def test_voxel_file_layout(tmp_path, rng):
    v = rng.normal(size=(5, 3, 4)).astype(np.float32)
    write_voxel(tmp_path / "a.vox", v)
    buf = (tmp_path / "a.vox").read_bytes()
    assert buf[:4] == b"VOX1" and struct.unpack_from("<III", buf, 4) == (5, 3, 4)
    assert len(buf) == 16 + 4 * v.size
    assert np.array_equal(read_voxel(tmp_path / "a.vox"), v)


def test_flow_roundtrip(tmp_path, rng):
    f = rng.normal(size=(2, 3, 5)).astype(np.float32)
    write_flow(tmp_path / "f.flo", f)
    assert np.array_equal(read_flow(tmp_path / "f.flo"), f)
    with pytest.raises(FormatError):
        read_voxel(tmp_path / "f.flo")


def test_quantize_clamps_and_rounds_half_up():
    vals = np.array([-0.5, 0.0, 0.5 / 255, 1.5 / 255, 0.999, 1.0, 7.0])
    assert quantize(vals).tolist() == [0, 0, 1, 2, 255, 255, 255]


def test_pgm_roundtrip(tmp_path):
    img = np.arange(12).reshape(1, 3, 4) / 11.0
    write_pgm(tmp_path / "x.pgm", img)
    assert (tmp_path / "x.pgm").read_bytes().startswith(b"P5\n4 3\n255\n")
    back = read_pgm(tmp_path / "x.pgm")
    assert back.shape == (1, 3, 4)
    assert np.max(np.abs(back - img)) <= 0.5 / 255 + 1e-12


def test_metrics_csv(tmp_path):
    means = write_metrics_csv(tmp_path / "m.csv", [(0, math.inf, 1.0), (1, 20.0, 0.5)])
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == ",".join(METRICS_HEADER) == "frame_index,psnr_db,ssim"
    assert lines[1] == "0,inf,1.000000" and lines[2] == "1,20.000000,0.500000"
    assert lines[3] == "mean,inf,0.750000"
    assert means[1] == 0.75


def test_frame_metrics(rng):
    frames = [rng.uniform(0, 1, (1, 16, 16)) for _ in range(3)]
    rows = frame_metrics(frames, frames)
    assert all(r[1] == math.inf and r[2] == pytest.approx(1.0) for r in rows)
    with pytest.raises(ValueError, match="mismatch"):
        frame_metrics(frames, frames[:2])
    scaled = [0.5 * f + 0.2 for f in frames]
    # an affine change of the whole sequence vanishes under joint normalization
    assert all(r[1] > 60 for r in frame_metrics(scaled, frames, normalize=True))
    assert all(r[1] < 60 for r in frame_metrics(scaled, frames, normalize=False))


def test_minmax_joint():
    a, b = minmax([np.array([1.0, 2.0]), np.array([3.0])])
    assert a.tolist() == [0.0, 0.5] and b.tolist() == [1.0]
    assert not minmax([np.ones(3)])[0].any()


# -- run configuration -------------------------------------------------------------------------

def test_config_file_parsing(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# toy run\nseed = 7   # trailing comment\nmodel.bins=4\n\nscene.static = yes\ngrouping = count:500\n")
    cfg = RunConfig.from_file(p)
    assert cfg["seed"] == 7 and cfg["model.bins"] == 4 and cfg["scene.static"] is True
    assert cfg.model_config().bins == 4
    assert cfg.scene_config().static and cfg.scene_config().seed == 7
    assert parse_grouping(cfg["grouping"]) == ("count", 500)


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(RunConfigError, match="unknown"):
        RunConfig({"model.bogus": 1})
    with pytest.raises(RunConfigError):
        RunConfig({"seed": "abc"})
    with pytest.raises(RunConfigError, match="line 2"):
        parse_config_text("seed = 1\njust words\n")


def test_grouping_specs():
    assert parse_grouping("frames") == ("frames", 0.0)
    assert parse_grouping("duration:50") == ("duration", 0.05)
    with pytest.raises(RunConfigError):
        parse_grouping("count:")


def test_config_echoed_to_log(caplog):
    cfg = RunConfig({"seed": 3})
    with caplog.at_level(logging.INFO):
        cfg.log_values()
    logged = caplog.text
    assert "config seed = 3" in logged
    assert all(f"config {k} = " in logged for k in cfg.values)


def test_config_dump_roundtrip():
    cfg = RunConfig({"train.lr": 0.01, "eval.normalize": False})
    again = RunConfig(parse_config_text(cfg.dumps()))
    assert again.values == cfg.values
