import json

import numpy as np
import pytest

from handpressure.cli import AccumulationCanvas, accumulate_pressure, colorize, run_command
from handpressure.core import PressureImage, make_binning, read_pvp1
from handpressure.errors import InvalidArgument
from handpressure.model import Checkpoint, ModelConfig, PressureEstimator, save_checkpoint


def test_canvas_single_frame_and_union():
    a = np.zeros((4, 4))
    a[0, 0] = 5.0
    b = np.zeros((4, 4))
    b[3, 3] = 2.0
    canvas = AccumulationCanvas().add(a)
    assert np.array_equal(canvas.values, a)
    canvas.add(PressureImage(b))
    assert np.array_equal(canvas.values, a + b)
    assert canvas.frames == 2


def test_canvas_holds_maximum():
    canvas = AccumulationCanvas()
    for v in (1.0, 7.0, 3.0):
        canvas.add(np.full((2, 2), v))
    assert (canvas.values == 7.0).all()


def test_canvas_rejects_shape_change_and_empty():
    canvas = AccumulationCanvas().add(np.zeros((3, 3)))
    with pytest.raises(InvalidArgument):
        canvas.add(np.zeros((3, 4)))
    with pytest.raises(InvalidArgument):
        AccumulationCanvas().image()
    with pytest.raises(InvalidArgument):
        accumulate_pressure([], lambda x: x)


def test_accumulate_uses_predictions():
    b = make_binning()
    frames = [np.zeros((4, 4, 3), np.uint8) for _ in range(3)]
    frames[1][1, 2] = 255

    def predict(imgs):
        return np.where(np.asarray(imgs)[..., 0] > 0, 6, 0)

    canvas = accumulate_pressure(frames, predict, b, batch_size=2)
    assert canvas.frames == 3
    assert canvas.values[1, 2] == pytest.approx(b.representatives[6])
    assert (canvas.values > 0).sum() == 1
    with pytest.raises(InvalidArgument):
        accumulate_pressure([np.zeros((4, 4, 3), np.uint8), np.zeros((5, 4, 3), np.uint8)], predict, b)


def test_colormap_anchors():
    b = make_binning()
    rgb = colorize(np.array([[0.0, 0.3, b.edges[1], b.edges[-2] * 2]]), b)
    assert (rgb[0, 0] == 0).all() and (rgb[0, 1] == 0).all()
    assert tuple(rgb[0, 3]) == (255, 230, 0)
    mid = colorize(np.array([[np.sqrt(b.edges[1] * b.edges[-2])]]), b)[0, 0]
    assert tuple(mid) == (128, 0, 160)


def _manifest(path):
    return json.loads((path / "manifest.json").read_text())


def test_synth_is_deterministic(tmp_path):
    for name in ("a", "b"):
        assert run_command(["synth", "--out", str(tmp_path / name), "--scenes", "12", "--seed", "7"]) == 0
    a, b = _manifest(tmp_path / "a"), _manifest(tmp_path / "b")
    assert a == b
    assert "index.tsv" in a["artifacts"] and len(a["artifacts"]) > 12


def test_evaluate_zero_guesser(tmp_path, capsys):
    run_command(["synth", "--out", str(tmp_path / "d"), "--scenes", "20", "--seed", "1"])
    assert run_command(["evaluate", "--ckpt", "zero", "--data", str(tmp_path / "d"), "--out", str(tmp_path / "e")]) == 0
    report = json.loads((tmp_path / "e" / "report.json").read_text())
    assert report["contact_iou"] == 0.0
    rows = (tmp_path / "e" / "report.tsv").read_text().splitlines()
    assert all(len(r.split("\t")) == 4 for r in rows)
    assert set(_manifest(tmp_path / "e")["artifacts"]) == {"report.tsv", "report.json"}


def test_usage_errors_exit_2(tmp_path, capsys):
    assert run_command(["nonsense", "--out", str(tmp_path)]) == 2
    assert run_command(["synth", "--out", str(tmp_path), "--bogus"]) == 2
    assert run_command(["evaluate", "--out", str(tmp_path), "--ckpt", "zero"]) == 2
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 3 and all(line.startswith("usage error") for line in err)


def test_failures_give_one_line_and_nonzero(tmp_path, capsys):
    rc = run_command(["evaluate", "--ckpt", str(tmp_path / "none.pvm"), "--data", str(tmp_path), "--out",
                      str(tmp_path / "o")])
    err = capsys.readouterr().err.strip().splitlines()
    assert rc == 1 and len(err) == 1 and "index.tsv" in err[0]


def test_config_file_supplies_defaults(tmp_path):
    run_command(["synth", "--out", str(tmp_path / "d"), "--scenes", "4", "--seed", "2"])
    cfg = tmp_path / "s.cfg"
    cfg.write_text(f"data = {tmp_path / 'd'}\ngrid = 4\nindex = 1\n")
    assert run_command(["sensitivity", "--ckpt", "zero", "--config", str(cfg), "--out", str(tmp_path / "s")]) == 0
    assert read_pvp1(tmp_path / "s" / "sensitivity.pvp1").values.shape == (4, 4)
    cfg.write_text("grdi = 4\n")
    assert run_command(["sensitivity", "--ckpt", "zero", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 2


def test_train_evaluate_accumulate_degrade(tmp_path):
    data = tmp_path / "d"
    run_command(["synth", "--out", str(data), "--scenes", "24", "--seed", "3", "--personas", "4", "--size", "32"])
    cfg = tmp_path / "c.cfg"
    cfg.write_text(f"train_dir = {data}\niters_phase1 = 4\niters_phase2 = 2\nbatch_size = 4\n"
                   "input_w = 32\ninput_h = 32\nckpt_interval = 3\n")
    assert run_command(["train", "--config", str(cfg), "--out", str(tmp_path / "t")]) == 0
    ckpt = tmp_path / "t" / "model_final.pvm"
    assert {"ckpt_000003.pvm", "ckpt_000006.pvm", "model_final.pvm", "history.json"} <= \
        set(_manifest(tmp_path / "t")["artifacts"])
    assert run_command(["evaluate", "--ckpt", str(ckpt), "--data", str(data), "--participants", "p00",
                        "--out", str(tmp_path / "e")]) == 0
    assert json.loads((tmp_path / "e" / "report.json").read_text())["frames"] == 6
    stroke = tmp_path / "stroke"
    assert run_command(["synth", "--out", str(stroke), "--stroke", "5", "--size", "32"]) == 0
    assert run_command(["accumulate", "--ckpt", str(ckpt), "--data", str(stroke), "--out", str(tmp_path / "a")]) == 0
    assert {"canvas.png", "canvas.pvp1", "canvas_gt.pvp1", "accumulate.json"} <= \
        set(_manifest(tmp_path / "a")["artifacts"])
    assert run_command(["degrade-eval", "--ckpt", str(ckpt), "--data", str(data), "--factors", "2,4",
                        "--monochrome", "--out", str(tmp_path / "g")]) == 0
    summary = json.loads((tmp_path / "g" / "degrade.json").read_text())
    assert list(summary) == ["native", "1/2", "1/4", "monochrome"]


def test_baseline_synthetic_then_reload(tmp_path):
    assert run_command(["baseline", "--synthetic", "3", "--seed", "5", "--steps", "21", "--out",
                        str(tmp_path / "b")]) == 0
    first = json.loads((tmp_path / "b" / "baseline.json").read_text())
    assert first["best_scale"] == pytest.approx(1.0)
    assert run_command(["baseline", "--data", str(tmp_path / "b" / "sequence"), "--steps", "21", "--out",
                        str(tmp_path / "c")]) == 0
    assert json.loads((tmp_path / "c" / "baseline.json").read_text()) == first


def test_sensitivity_from_checkpoint(tmp_path):
    model = PressureEstimator(ModelConfig(input_w=32, input_h=32))
    save_checkpoint(tmp_path / "m.pvm", Checkpoint(model))
    run_command(["synth", "--out", str(tmp_path / "d"), "--scenes", "2", "--size", "32"])
    assert run_command(["sensitivity", "--ckpt", str(tmp_path / "m.pvm"), "--data", str(tmp_path / "d"),
                        "--grid", "8", "--out", str(tmp_path / "s")]) == 0
    assert run_command(["sensitivity", "--ckpt", str(tmp_path / "m.pvm"), "--data", str(tmp_path / "d"),
                        "--index", "9", "--out", str(tmp_path / "s2")]) == 1
