import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from handpressure.core import PressureImage, contact_map
from handpressure.errors import InvalidArgument
from handpressure.metrics import (
    FrameMetricAccumulator,
    MetricsReport,
    aggregate,
    contact_iou,
    mae,
    temporal_accuracy,
    volumetric_iou,
    zero_guesser,
)

from oracles import brute_metrics

images = arrays(np.float64, (4, 5), elements=st.floats(0, 90, allow_nan=False))


def random_frames(rng, n, h, w):
    frames = rng.exponential(3.0, size=(n, h, w)) * (rng.random((n, h, w)) < 0.4)
    frames[rng.random(n) < 0.3] = 0.0
    return frames


def test_volumetric_iou_hand_cases():
    p = np.array([[2.0, 0.0]])
    assert volumetric_iou(p, p) == 1.0
    assert volumetric_iou(np.array([[2.0, 0.0]]), np.array([[0.0, 3.0]])) == 0.0
    assert volumetric_iou(np.array([[1.0, 1.0]]), p) == 1 / 3
    assert volumetric_iou(np.zeros((2, 2)), np.zeros((2, 2))) is None
    with pytest.raises(InvalidArgument):
        volumetric_iou(np.array([[-1.0]]), np.array([[1.0]]))


def test_contact_iou_cases():
    gt = np.array([[True, True, False]])
    assert contact_iou(gt, gt) == 1.0
    assert contact_iou(np.array([[True, False, False]]), gt) == 0.5
    assert contact_iou(np.zeros((3, 3), bool), np.zeros((3, 3), bool)) is None
    with pytest.raises(InvalidArgument):
        contact_iou(np.zeros((3, 3), bool), np.zeros((3, 2), bool))


def test_temporal_accuracy_cases():
    c, n = np.ones((2, 2), bool), np.zeros((2, 2), bool)
    assert temporal_accuracy([c, c, n], [c, n, c]) == pytest.approx(1 / 3)
    assert temporal_accuracy([n, n], [n, n]) == 1.0
    with pytest.raises(InvalidArgument):
        temporal_accuracy([c], [c, c])


def test_mae_cases():
    gt = np.array([[2.0, 0.0], [1.0, 1.0]])
    assert mae(gt, gt) == 0.0
    assert mae(np.zeros_like(gt), gt) == pytest.approx(gt.mean() * 1000)
    with pytest.raises(InvalidArgument):
        mae(gt, gt[:1])


def test_zero_guesser():
    img = np.full((12, 16, 3), 200, np.uint8)
    z = zero_guesser(img)
    assert z.values.shape == (12, 16) and not z.values.any()
    gt = np.zeros((12, 16))
    gt[3, 3] = 5.0
    assert contact_iou(contact_map(z), contact_map(gt)) == 0.0
    assert temporal_accuracy(contact_map(z), contact_map(np.zeros((12, 16)))) == 1.0


@given(images, images)
def test_volumetric_symmetric_bounded(a, b):
    v = volumetric_iou(a, b)
    assert v == volumetric_iou(b, a)
    if v is not None:
        assert 0.0 <= v <= 1.0


@given(images, st.floats(0.01, 100))
def test_volumetric_identity_and_scale(a, k):
    v = volumetric_iou(a, a)
    assert v is None if not a.any() else v == 1.0


@given(images, images, st.floats(0.01, 100))
def test_volumetric_scale_invariant(a, b, k):
    v, vk = volumetric_iou(a, b), volumetric_iou(a * k, b * k)
    if v is None:
        assert vk is None or not (a * k).any()
    elif vk is not None:
        assert vk == pytest.approx(v, rel=1e-9, abs=1e-12)


def test_volumetric_one_only_if_identical():
    a = np.array([[1.0, 2.0]])
    assert volumetric_iou(a, a + [[0, 1e-6]]) < 1.0


@settings(max_examples=100)
@given(arrays(bool, (6, 6)), arrays(bool, (6, 6)))
def test_contact_iou_equals_volumetric_on_indicators(a, b):
    assert contact_iou(a, b) == volumetric_iou(a.astype(float), b.astype(float))


@given(images, images, images)
def test_mae_triangle(a, b, c):
    assert mae(a, b) >= 0
    assert mae(a, c) <= mae(a, b) + mae(b, c) + 1e-9


@pytest.mark.parametrize("seed", range(10))
def test_accumulator_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n, h, w = rng.integers(1, 8), rng.integers(1, 12), rng.integers(1, 12)
    est, gt = random_frames(rng, n, h, w), random_frames(rng, n, h, w)
    acc = FrameMetricAccumulator()
    for e, g in zip(est, gt):
        acc.add(e, g)
    ref = brute_metrics(est.tolist(), gt.tolist())
    assert (acc.frames_correct, acc.contact_inter, acc.contact_union, acc.pixels) == ref["counts"]
    for name in ("temporal_accuracy", "contact_iou", "volumetric_iou", "mae"):
        got, want = getattr(acc, name), ref[name]
        assert (got is None) == (want is None)
        if want is not None:
            assert got == pytest.approx(want, rel=1e-9, abs=1e-15)


def test_accumulator_merge_is_order_free():
    rng = np.random.default_rng(1)
    est, gt = random_frames(rng, 6, 8, 8), random_frames(rng, 6, 8, 8)
    accs = [FrameMetricAccumulator().add(e, g) for e, g in zip(est, gt)]
    fwd, rev = FrameMetricAccumulator(), FrameMetricAccumulator()
    for a in accs:
        fwd = fwd.merge(a)
    for a in reversed(accs):
        rev = rev.merge(a)
    whole = FrameMetricAccumulator().add(est, gt)
    for name in ("temporal_accuracy", "contact_iou", "volumetric_iou", "mae"):
        assert getattr(fwd, name) == pytest.approx(getattr(whole, name), rel=1e-12)
        assert getattr(rev, name) == pytest.approx(getattr(whole, name), rel=1e-12)


def test_aggregate_single_frame():
    rng = np.random.default_rng(2)
    e, g = random_frames(rng, 1, 6, 6)[0], random_frames(rng, 1, 6, 6)[0] + 2.0
    acc = FrameMetricAccumulator().add(e, g)
    rep = aggregate([(acc, {"action": "press", "force_level": "high"})])
    assert rep.frames == 1
    assert rep.volumetric_iou == acc.volumetric_iou and rep.mae == acc.mae
    assert rep.groups["action"]["press"]["frames"] == 1


def test_aggregate_groups_pool_sums():
    rng = np.random.default_rng(5)
    est, gt = random_frames(rng, 8, 6, 6), random_frames(rng, 8, 6, 6)
    metas = [{"action": "tap" if i < 3 else "swipe", "force_level": "high" if i % 2 else "low"} for i in range(8)]
    items = [(FrameMetricAccumulator().add(e, g), m) for e, g, m in zip(est, gt, metas)]
    rep = aggregate(items)
    ref = brute_metrics(est.tolist(), gt.tolist())
    assert rep.volumetric_iou == pytest.approx(ref["volumetric_iou"], rel=1e-9)
    assert rep.mae == pytest.approx(ref["mae"], rel=1e-9)
    tap = brute_metrics(est[:3].tolist(), gt[:3].tolist())
    assert rep.groups["action"]["tap"]["mae"] == pytest.approx(tap["mae"], rel=1e-9)
    assert sum(g["frames"] for g in rep.groups["force_level"].values()) == rep.frames
    with pytest.raises(InvalidArgument):
        aggregate([])


def test_undefined_groups_are_omitted():
    z = np.zeros((4, 4))
    items = [(FrameMetricAccumulator().add(z, z), {"action": "hover", "force_level": "none"})]
    rep = aggregate(items)
    assert rep.contact_iou is None
    assert "contact_iou" not in rep.groups["action"]["hover"]
    lines = rep.to_tsv().splitlines()
    assert all(len(line.split("\t")) == 4 for line in lines)
    assert not any(line.startswith("contact_iou") for line in lines)
    assert MetricsReport.from_dict(rep.to_dict()) == rep


def test_force_rows_by_level():
    pitch = 1e-3
    items = []
    for level, q in (("high", 20.0), ("low", 5.0)):
        g = PressureImage(np.full((10, 10), q), space="camera", pixel_pitch=pitch)
        items.append((FrameMetricAccumulator().add(np.zeros((10, 10)), g), {"action": "a", "force_level": level}))
    rep = aggregate(items)
    assert rep.groups["force_level"]["high"]["mean_gt_force"] == pytest.approx(20e3 * 100 * pitch**2)
    assert rep.groups["force_level"]["low"]["mean_gt_force"] == pytest.approx(5e3 * 100 * pitch**2)
