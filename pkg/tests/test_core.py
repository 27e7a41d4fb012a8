import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from handpressure.core import (
    CAMERA,
    SENSOR,
    PressureImage,
    contact_map,
    decode_pvp1,
    dequantize,
    encode_pvp1,
    make_binning,
    quantize,
    read_pvp1,
    total_force,
    write_pvp1,
)
from handpressure.errors import InvalidArgument, LoadError

B = make_binning(0.5, 82.0, 9)

pressures = arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 8)),
                   elements=st.floats(0, 500, allow_nan=False))


def test_default_edges_closed_form():
    # independent evaluation of p_min * (p_max / p_min) ** (k / 8)
    assert B.edges[0] == 0.0
    assert B.edges[1] == 0.5
    assert B.edges[2] == pytest.approx(0.9458570066827465, rel=1e-12)
    assert B.edges[3] == pytest.approx(1.7892909541816904, rel=1e-12)
    assert B.edges[-1] == 82.0
    assert len(B.edges) == 10 and len(B.representatives) == 9


def test_edge_ratio_constant():
    ratio = (82 / 0.5) ** (1 / 8)
    for lo, hi in zip(B.edges[1:-1], B.edges[2:]):
        assert abs(hi / lo - ratio) <= 1e-9 * ratio


def test_two_bin_case():
    b = make_binning(1, 2, 2)
    assert b.edges == (0.0, 1.0, 2.0)
    assert b.representatives == (0.0, pytest.approx(math.sqrt(2)))


@pytest.mark.parametrize("args", [(0, 82, 9), (-1, 82, 9), (5, 2, 9), (1, 1, 9), (0.5, 82, 1), (0.5, float("inf"), 9)])
def test_make_binning_rejects(args):
    with pytest.raises(InvalidArgument):
        make_binning(*args)


def test_representatives_inside_bins():
    assert B.representatives[0] == 0
    for k in range(1, 9):
        lo, hi = B.edges[k], B.edges[k + 1]
        assert lo < B.representatives[k] < hi
        assert B.representatives[k] == pytest.approx(math.sqrt(lo * hi))


@pytest.mark.parametrize("value,label", [(0.0, 0), (0.4999, 0), (0.5, 1), (0.9458570066827465, 2),
                                         (81.99, 8), (82.0, 8), (200.0, 8)])
def test_quantize_examples(value, label):
    assert quantize(np.array([[value]]), B)[0, 0] == label


@pytest.mark.parametrize("bad", [-0.1, np.nan, np.inf])
def test_quantize_rejects(bad):
    with pytest.raises(InvalidArgument):
        quantize(np.array([[1.0, bad]]), B)


def test_round_trip_every_label():
    labels = np.arange(9).reshape(3, 3)
    assert np.array_equal(quantize(dequantize(labels, B), B), labels)
    assert dequantize(np.zeros((2, 2), int), B).values.sum() == 0


def test_dequantize_rejects_out_of_range():
    with pytest.raises(InvalidArgument):
        dequantize(np.array([[9]]), B)
    with pytest.raises(InvalidArgument):
        dequantize(np.array([[-1]]), B)


@given(st.floats(0.5, 82.0))
def test_quantization_error_bounded(p):
    rep = dequantize(quantize(np.array([[p]]), B), B).values[0, 0]
    assert abs(rep - p) / p <= B.edge_ratio - 1


@given(pressures, st.floats(0, 100), st.floats(0, 100))
def test_contact_map_monotone(p, t1, t2):
    lo, hi = sorted((t1, t2))
    assert not np.any(contact_map(p, hi) & ~contact_map(p, lo))


def test_contact_threshold_is_strict():
    p = np.array([[1.0, 1.001, 0.0]])
    assert contact_map(p).tolist() == [[False, True, False]]
    assert not contact_map(np.zeros((4, 4))).any()
    with pytest.raises(InvalidArgument):
        contact_map(p, -1)


def test_total_force():
    assert total_force(PressureImage.zeros(105, 185, space=SENSOR, pixel_pitch=1.25e-3)) == 0
    img = np.zeros((105, 185))
    img[:10, :10] = 82.0
    assert total_force(PressureImage(img)) == pytest.approx(12.8125, rel=1e-12)
    with pytest.raises(InvalidArgument):
        total_force(PressureImage(img, space=CAMERA, pixel_pitch=None))


@given(pressures, st.floats(0.01, 10))
def test_total_force_linear_and_additive(p, k):
    img = PressureImage(p)
    assert total_force(PressureImage(p * k)) == pytest.approx(k * total_force(img), rel=1e-9, abs=1e-12)
    mask = np.zeros(p.shape, bool)
    mask.flat[::2] = True
    a, b = PressureImage(np.where(mask, p, 0)), PressureImage(np.where(mask, 0, p))
    assert total_force(a) + total_force(b) == pytest.approx(total_force(img), rel=1e-9, abs=1e-12)


def test_pressure_image_invariants():
    with pytest.raises(InvalidArgument):
        PressureImage(np.array([[-1.0]]))
    with pytest.raises(InvalidArgument):
        PressureImage(np.array([[np.nan]]))
    with pytest.raises(InvalidArgument):
        PressureImage(np.zeros(3))


@settings(max_examples=30)
@given(pressures.map(lambda a: a.astype(np.float32)), st.sampled_from([SENSOR, CAMERA]))
def test_pvp1_round_trip(p, space):
    img = PressureImage(p, space=space, pixel_pitch=1.25e-3 if space == SENSOR else None)
    buf = encode_pvp1(img)
    back = decode_pvp1(buf)
    assert encode_pvp1(back) == buf
    assert np.array_equal(back.values, p)
    assert back.space == space


def test_pvp1_layout(tmp_path):
    img = PressureImage(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    path = tmp_path / "a.pvp1"
    write_pvp1(path, img)
    raw = path.read_bytes()
    assert raw[:4] == b"PVP1"
    assert int.from_bytes(raw[4:8], "little") == 3
    assert int.from_bytes(raw[8:12], "little") == 1
    assert raw[12] == 0
    assert len(raw) == 17 + 12
    assert read_pvp1(path).values.tolist() == [[1.0, 2.0, 3.0]]


@pytest.mark.parametrize("mangle", [lambda b: b"XVP1" + b[4:], lambda b: b[:-1], lambda b: b[:10],
                                    lambda b: b[:17] + b"\x00\x00\xc0\xff" + b[21:]])
def test_pvp1_corruption_names_file(tmp_path, mangle):
    path = tmp_path / "frame_07.pvp1"
    path.write_bytes(mangle(encode_pvp1(PressureImage(np.ones((2, 2), np.float32)))))
    with pytest.raises(LoadError) as err:
        read_pvp1(path)
    assert "frame_07.pvp1" in str(err.value)
