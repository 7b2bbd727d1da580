import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from matplotlib.colors import rgb_to_hsv
from PIL import Image

from bidiflow.flowio import (
    FlowFormatError,
    decode_kitti,
    encode_kitti,
    flow_to_color,
    read_flo,
    read_flow,
    read_image,
    read_kitti_flow,
    write_flo,
    write_flow,
    write_image,
    write_kitti_flow,
)
from bidiflow.grid import FlowField


def test_flo_round_trip_7x5(tmp_path, rng):
    flow = FlowField(*rng.normal(scale=20, size=(2, 5, 7)))
    write_flo(tmp_path / "a.flo", flow)
    back = read_flo(tmp_path / "a.flo")
    assert back.shape == (5, 7)
    assert np.array_equal(back.u, flow.u.astype(np.float32)) and np.array_equal(back.v, flow.v.astype(np.float32))


def test_flo_byte_layout(tmp_path):
    write_flo(tmp_path / "one.flo", FlowField(np.array([[1.5]]), np.array([[-2.25]])))
    raw = (tmp_path / "one.flo").read_bytes()
    assert len(raw) == 20
    assert struct.unpack("<fiiff", raw) == (202021.25, 1, 1, 1.5, -2.25)


def test_flo_bad_magic(tmp_path):
    p = tmp_path / "bad.flo"
    p.write_bytes(struct.pack("<fiiff", 1.0, 1, 1, 0.0, 0.0))
    with pytest.raises(FlowFormatError, match="magic"):
        read_flo(p)


def test_flo_truncated_and_short(tmp_path):
    p = tmp_path / "t.flo"
    write_flo(p, FlowField.zeros(4, 3))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(FlowFormatError, match="truncated"):
        read_flo(p)
    p.write_bytes(b"PIEH")
    with pytest.raises(FlowFormatError):
        read_flo(p)
    p.write_bytes(struct.pack("<fii", 202021.25, 0, 5))
    with pytest.raises(FlowFormatError, match="dimensions"):
        read_flo(p)


def test_flo_invalid_pixels(tmp_path):
    flow = FlowField.constant(3, 2, 1.0, 2.0)
    valid = np.ones((2, 3))
    valid[1, 1] = 0
    write_flo(tmp_path / "v.flo", flow, valid)
    back, v = read_flo(tmp_path / "v.flo", return_valid=True)
    assert np.array_equal(v, valid)
    assert back.u[1, 1] == 0 and back.u[0, 0] == 1.0


def test_kitti_examples():
    enc = encode_kitti(FlowField(np.array([[0.0, 1.0]]), np.zeros((1, 2))))
    assert enc[0, 0, 0] == 32768 and enc[0, 1, 0] == 32832
    assert enc[..., 2].tolist() == [[1, 1]]
    enc = encode_kitti(FlowField.constant(2, 1, 7.0, -3.0), np.array([[1, 0]]))
    assert enc[0, 1, 2] == 0
    flow, valid = decode_kitti(enc)
    assert valid.tolist() == [[1, 0]] and flow.u[0, 1] == 0 and flow.u[0, 0] == 7.0


def test_kitti_range_and_type_errors():
    with pytest.raises(ValueError):
        encode_kitti(FlowField.constant(1, 1, 600.0, 0.0))
    with pytest.raises(FlowFormatError):
        decode_kitti(np.zeros((2, 2, 3), dtype=np.uint8))
    with pytest.raises(FlowFormatError):
        decode_kitti(np.zeros((2, 2), dtype=np.uint16))


def test_kitti_file_channel_order(tmp_path):
    flow = FlowField.constant(4, 3, 2.0, -1.0)
    write_kitti_flow(tmp_path / "k.png", flow)
    # 16-bit RGB on disk, first channel is u
    import cv2
    raw = cv2.imread(str(tmp_path / "k.png"), cv2.IMREAD_UNCHANGED)
    assert raw.dtype == np.uint16
    assert raw[0, 0, 2] == 32768 + 128 and raw[0, 0, 0] == 1
    back, valid = read_kitti_flow(tmp_path / "k.png")
    assert np.array_equal(back.u, flow.u) and valid.all()


def test_dispatch(tmp_path, rng):
    flow = FlowField(*np.round(rng.normal(size=(2, 3, 4)) * 64) / 64)
    for name, fmt in (("a.flo", "middlebury_flo"), ("a.png", "kitti_png16")):
        write_flow(tmp_path / name, flow)
        ff = read_flow(tmp_path / name)
        assert ff.format == fmt and np.array_equal(ff.field.u, flow.u)
    with pytest.raises(FlowFormatError):
        read_flow(tmp_path / "a.pfm")
    with pytest.raises(FlowFormatError):
        write_flow(tmp_path / "a.pfm", flow)


field_arrays = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 32 - 1))


@settings(max_examples=40, deadline=None)
@given(field_arrays)
def test_flo_round_trip_property(tmp_path_factory, params):
    w, h, seed = params
    r = np.random.default_rng(seed)
    flow = FlowField(*(r.normal(scale=100, size=(2, h, w)).astype(np.float32).astype(np.float64)))
    p = tmp_path_factory.mktemp("flo") / "x.flo"
    write_flo(p, flow)
    back = read_flo(p)
    assert np.array_equal(back.stack(), flow.stack())


@settings(max_examples=40, deadline=None)
@given(field_arrays)
def test_kitti_round_trip_property(params):
    w, h, seed = params
    r = np.random.default_rng(seed)
    flow = FlowField(*(r.uniform(-500, 500, size=(2, h, w))))
    back, valid = decode_kitti(encode_kitti(flow))
    assert valid.all()
    assert np.abs(back.stack() - flow.stack()).max() <= 0.5 / 64 + 1e-12


def test_color_wheel_examples():
    assert np.allclose(flow_to_color(FlowField.zeros(3, 2)), 1.0)
    img = flow_to_color(FlowField.constant(1, 1, 4.0, 0.0), max_mag=4.0)
    hsv = rgb_to_hsv(img)
    assert hsv[0, 0, 0] == pytest.approx(0.0) and hsv[0, 0, 1] == pytest.approx(1.0)
    assert np.allclose(img[0, 0], [1.0, 0.0, 0.0])


def test_color_wheel_rotation_is_complementary(rng):
    flow = FlowField(*rng.normal(size=(2, 5, 5)))
    a = rgb_to_hsv(flow_to_color(flow, max_mag=3.0))[..., 0]
    b = rgb_to_hsv(flow_to_color(-flow, max_mag=3.0))[..., 0]
    assert np.allclose(np.mod(a - b, 1.0), 0.5)
    with pytest.raises(ValueError):
        flow_to_color(flow, max_mag=-1)


def test_images(tmp_path, rng):
    img = rng.random((6, 5))
    write_image(tmp_path / "g.png", img)
    back = read_image(tmp_path / "g.png")
    assert back.shape == (6, 5) and np.abs(back - img).max() <= 0.5 / 255 + 1e-12
    rgb = (rng.random((4, 3, 3)) * 255).astype(np.uint8)
    Image.fromarray(rgb).save(tmp_path / "c.ppm")
    assert np.array_equal(read_image(tmp_path / "c.ppm"), rgb / 255.0)
    Image.fromarray(np.zeros((3, 3), dtype=np.uint16)).save(tmp_path / "d.png")
    with pytest.raises(FlowFormatError):
        read_image(tmp_path / "d.png")
