import os
import struct

import numpy as np
import pytest

from csstereo.cli import run
from csstereo.pnm import RawImage, decode_disp16, decode_ppm, encode_ppm

CONFIG = """
max_disp = 8
levels = 3
base_channels = 8
channel_step = 8
stem_channels = 8
signature_dims = 16,8
lr_schedule = 3:1e-4
batch_size = 1
seed = 1
checkpoint_interval = 2
stats_samples = 2
scale_aug = false
swap_flip = true
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    td = tmp_path_factory.mktemp("cli")
    data = str(td / "data")
    assert run(["synth", "--count", "3", "--dims", "96x96", "--seed", "3", "--out", data]) == 0
    return td, data


def test_unknown_flags_exit_2(capsys):
    assert run(["infer", "--nonsense"]) == 2
    assert run(["not-a-command"]) == 2
    capsys.readouterr()


def test_synth_deterministic(workdir):
    td, data = workdir
    other = str(td / "data_twin")
    assert run(["synth", "--count", "3", "--dims", "96x96", "--seed", "3", "--out", other]) == 0
    for sub in ("left", "right", "disp_left", "disp_right"):
        for n in sorted(os.listdir(os.path.join(data, sub))):
            a = open(os.path.join(data, sub, n), "rb").read()
            b = open(os.path.join(other, sub, n), "rb").read()
            assert a == b


def test_costvol_fvol_header(workdir):
    td, data = workdir
    out = str(td / "c.fvol")
    left = os.path.join(data, "left", "0000.ppm")
    right = os.path.join(data, "right", "0000.ppm")
    assert run(["costvol", "--left", left, "--right", right, "--out", out, "--max-disp", "8"]) == 0
    blob = open(out, "rb").read()
    assert blob[:4] == b"FVOL"
    h, w, d = struct.unpack("<III", blob[4:16])
    assert (h, w, d) == (48, 48, 24)
    assert len(blob) == 16 + 4 * h * w * d
    assert run(["costvol", "--left", left, "--right", right, "--out", out,
                "--max-disp", "8", "--census-only"]) == 0
    _, _, d = struct.unpack("<III", open(out, "rb").read()[4:16])
    assert d == 8


def test_train_infer_eval_flow(workdir, capsys):
    td, data = workdir
    conf = str(td / "cfg.txt")
    open(conf, "w").write(CONFIG)
    wpath = str(td / "w.bin")
    assert run(["train", "--config", conf, "--data", data, "--out-weights", wpath]) == 0
    assert os.path.exists(wpath)
    assert os.path.exists(wpath + ".ckpt")
    log = open(wpath + ".loss.csv").read().splitlines()
    assert log[0] == "iter,loss,lr"
    assert len(log) == 4

    dpath = str(td / "d.pgm")
    vpath = str(td / "v.ppm")
    left = os.path.join(data, "left", "0000.ppm")
    right = os.path.join(data, "right", "0000.ppm")
    assert run(["infer", "--left", left, "--right", right, "--weights", wpath,
                "--out", dpath, "--vis", vpath]) == 0
    d = decode_disp16(open(dpath, "rb").read())
    assert (d.width, d.height) == (96, 96)
    assert d.valid.all()
    decode_ppm(open(vpath, "rb").read())  # vis is a valid PPM

    assert run(["infer", "--left", left, "--right", right, "--weights", wpath,
                "--out", dpath, "--mode", "train"]) == 0

    csv = str(td / "m.csv")
    assert run(["eval", "--pred-dir", os.path.join(data, "disp_left"),
                "--gt-dir", os.path.join(data, "disp_left"), "--csv", csv]) == 0
    lines = open(csv).read().splitlines()
    assert lines[0] == "image,avg_err,out2,out3,out4,out5,d1,valid_px"
    assert float(lines[-1].split(",")[1]) == 0.0
    capsys.readouterr()


def test_infer_dim_mismatch_exit_1(workdir, capsys):
    td, data = workdir
    bad = str(td / "bad.ppm")
    open(bad, "wb").write(encode_ppm(RawImage(np.zeros((10, 10, 3), np.uint8))))
    wpath = str(td / "w.bin")
    code = run(["infer", "--left", os.path.join(data, "left", "0000.ppm"),
                "--right", bad, "--weights", wpath, "--out", str(td / "x.pgm")])
    assert code == 1
    assert "differ" in capsys.readouterr().err


def test_no_partial_outputs_on_failure(workdir):
    td, data = workdir
    target = str(td / "never.pgm")
    bad = str(td / "bad2.ppm")
    open(bad, "wb").write(encode_ppm(RawImage(np.zeros((10, 10, 3), np.uint8))))
    run(["infer", "--left", os.path.join(data, "left", "0000.ppm"), "--right", bad,
         "--weights", str(td / "w.bin"), "--out", target])
    assert not os.path.exists(target)


def test_gradcheck_exit_zero(workdir, capsys):
    assert run(["gradcheck", "--seed", "0", "--seeds", "1"]) == 0
    out = capsys.readouterr().out
    assert "full_network" in out and "FAIL" not in out


def test_bench_reports_stages(tmp_path, capsys):
    # wide enough that half-res width >= the default D of 128
    data = str(tmp_path / "bench")
    assert run(["synth", "--count", "1", "--dims", "320x96", "--seed", "5", "--out", data]) == 0
    code = run(["bench", "--left", os.path.join(data, "left", "0000.ppm"),
                "--right", os.path.join(data, "right", "0000.ppm"), "--reps", "2"])
    out = capsys.readouterr().out
    assert code == 0
    for stage in ("cost_volumes", "signature", "spatial_net", "upsampling", "speedup"):
        assert stage in out


def test_resume_appends_log(workdir):
    td, data = workdir
    conf = str(td / "cfg.txt")
    wpath = str(td / "w.bin")
    # checkpoint sits at iter 2 of 3; rerun the tail with --resume
    assert run(["train", "--config", conf, "--data", data, "--out-weights", wpath, "--resume"]) == 0
    log = open(wpath + ".loss.csv").read().splitlines()
    assert len(log) == 4  # header + 3 iterations, nothing lost
    assert [int(r.split(",")[0]) for r in log[1:]] == [0, 1, 2]
