import math

import numpy as np
import pytest
import torch

from handpressure.core import make_binning, quantize
from handpressure.data import FrameSet, Persona, random_scene, synthesize_sample
from handpressure.errors import InvalidArgument, SetupError
from handpressure.metrics import volumetric_iou
from handpressure.model import load_checkpoint
from handpressure.train import TrainConfig, evaluate_checkpoint, evaluate_predictions, train


def small_set(n=8, seed=0, size=32, force_level=None):
    rng = np.random.default_rng(seed)
    samples = [synthesize_sample(random_scene(rng, Persona.make(i % 4), force_level=force_level, size=(size, size),
                                              timestamp=i / 15.0)) for i in range(n)]
    return FrameSet.from_samples(samples)


def quick_cfg(**kw):
    base = dict(iters_phase1=20, iters_phase2=0, input_w=32, input_h=32, ckpt_interval=1000, batch_size=4)
    return TrainConfig(**{**base, **kw})


def test_config_text_round_trip(tmp_path):
    cfg = TrainConfig(batch_size=4, lr_phase1=3e-3, iters_phase1=7, seed=11, train_dir="a/b", preset="tiny")
    path = tmp_path / "c.cfg"
    path.write_text(cfg.to_text())
    assert TrainConfig.read(path) == cfg


def test_config_rejects_unknown_and_bad_values():
    with pytest.raises(InvalidArgument, match="unknown key"):
        TrainConfig.from_text("learning_rate = 0.1\n")
    with pytest.raises(InvalidArgument):
        TrainConfig.from_text("batch_size = eight\n")
    with pytest.raises(InvalidArgument):
        TrainConfig(batch_size=0)
    with pytest.raises(InvalidArgument):
        TrainConfig(iters_phase1=0, iters_phase2=0)


def test_paper_schedule_preset():
    cfg = TrainConfig.paper()
    assert (cfg.lr_phase1, cfg.iters_phase1, cfg.lr_phase2, cfg.iters_phase2) == (1e-3, 100_000, 1e-4, 500_000)
    assert cfg.batch_size == 8
    assert cfg.lr_at(99_999) == 1e-3 and cfg.lr_at(100_000) == 1e-4 and cfg.lr_at(599_999) == 1e-4
    assert cfg.model_config().input_w == 480 and cfg.model_config().input_h == 384


def test_empty_dataset_is_setup_error(tmp_path):
    empty = FrameSet.from_samples([])
    with pytest.raises(SetupError):
        train(quick_cfg(), empty, None, tmp_path / "out")


def test_unwritable_checkpoint_dir(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(SetupError):
        train(quick_cfg(), small_set(4), None, blocker / "sub")
    assert not list(tmp_path.glob("**/*.pvm"))


def test_dimension_mismatch_is_setup_error(tmp_path):
    with pytest.raises(SetupError):
        train(quick_cfg(input_w=64, input_h=64), small_set(4), None, tmp_path)


def test_deterministic_loss_trajectory(tmp_path):
    data = small_set(8)
    cfg = quick_cfg(iters_phase1=100, seed=3)
    a = train(cfg, data, None, tmp_path / "a", log_every=1)
    b = train(cfg, data, None, tmp_path / "b", log_every=1)
    la = [h["loss"] for h in a.history if "loss" in h]
    lb = [h["loss"] for h in b.history if "loss" in h]
    assert len(la) == 100
    assert abs(la[99] - lb[99]) <= 1e-6
    assert (tmp_path / "a" / "model_final.pvm").read_bytes() == (tmp_path / "b" / "model_final.pvm").read_bytes()


def test_checkpoints_written_at_interval(tmp_path):
    res = train(quick_cfg(iters_phase1=10, iters_phase2=5, ckpt_interval=5), small_set(4), small_set(2, seed=9),
                tmp_path)
    names = sorted(p.name for p in tmp_path.glob("*.pvm"))
    assert names == ["ckpt_000005.pvm", "ckpt_000010.pvm", "ckpt_000015.pvm", "model_final.pvm"]
    val_rows = [h for h in res.history if "val_contact_iou" in h]
    assert [h["iteration"] for h in val_rows] == [5, 10, 15]
    assert load_checkpoint(tmp_path / "ckpt_000010.pvm").iteration == 10


def test_overfit_eight_samples(tmp_path):
    data = small_set(8, force_level="high")
    res = train(quick_cfg(iters_phase1=500, batch_size=8, lr_phase1=3e-3), data, None, tmp_path, log_every=1)
    losses = [h["loss"] for h in res.history if "loss" in h]
    assert losses[0] == pytest.approx(math.log(9), rel=0.3)
    assert np.mean(losses[-10:]) < 0.1 * losses[0]


@pytest.mark.parametrize("seed", range(5))
def test_loss_halves_across_seeds(tmp_path, seed):
    data = small_set(8, seed=seed, force_level="high")
    res = train(quick_cfg(iters_phase1=150, batch_size=8, lr_phase1=3e-3, seed=seed), data, None, tmp_path,
                log_every=1)
    losses = [h["loss"] for h in res.history if "loss" in h]
    assert np.mean(losses[-5:]) <= 0.5 * losses[0]


def test_zero_guesser_on_no_contact_data():
    data = small_set(6, force_level="none")
    rep = evaluate_checkpoint("zero", data)
    assert rep.temporal_accuracy == 1.0
    assert rep.mae == 0.0
    assert rep.contact_iou is None


def test_zero_guesser_contact_iou_zero():
    rep = evaluate_checkpoint("zero", small_set(6, force_level="high"))
    assert rep.contact_iou == 0.0


def test_perfect_oracle_reaches_quantization_ceiling():
    data = small_set(10, seed=4)
    b = make_binning()
    labels = quantize(data.pressures, b)
    rep = evaluate_predictions(labels, data, b)
    # the contact threshold sits inside a bin, so gt pixels in [lower edge, threshold]
    # dequantize above it; the oracle's IoU is exactly |p > 1| / |p >= edge|
    edge = b.edges[np.searchsorted(b.edges, 1.0) - 1]
    assert edge < 1.0 < b.representatives[2]
    expected = (data.pressures > 1.0).sum() / (data.pressures >= edge).sum()
    assert rep.contact_iou == pytest.approx(expected, rel=1e-12)
    ceiling = volumetric_iou(np.asarray(b.representatives)[labels], data.pressures)
    assert rep.volumetric_iou == pytest.approx(ceiling, rel=1e-12)
    assert 0.5 < ceiling < 1.0


def test_perfect_oracle_contact_iou_one_away_from_threshold_band():
    data = small_set(10, seed=4)
    b = make_binning()
    edge = b.edges[np.searchsorted(b.edges, 1.0) - 1]
    p = data.pressures.copy()
    band = (p >= edge) & (p <= 1.0)
    p[band] = 0.0
    clean = FrameSet(data.images, p, data.metas, data.pixel_pitch)
    rep = evaluate_predictions(quantize(p, b), clean, b)
    assert band.any()
    assert rep.contact_iou == 1.0


def test_reloaded_checkpoint_gives_identical_report(tmp_path):
    data = small_set(6)
    res = train(quick_cfg(iters_phase1=15), data, None, tmp_path)
    a = evaluate_checkpoint(res.checkpoint, data)
    b = evaluate_checkpoint(tmp_path / "model_final.pvm", data)
    assert a.to_tsv() == b.to_tsv()


def test_binning_mismatch_rejected(tmp_path):
    data = small_set(4)
    res = train(quick_cfg(iters_phase1=2), data, None, tmp_path)
    with pytest.raises(InvalidArgument, match="binning"):
        evaluate_checkpoint(res.checkpoint, data, binning=make_binning(p_max=60.0))


def test_train_leaves_global_rng_usable(tmp_path):
    train(quick_cfg(iters_phase1=2), small_set(4), None, tmp_path)
    torch.rand(1)
