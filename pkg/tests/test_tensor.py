import struct

import numpy as np
import pytest

from attrivis import tensor
from attrivis.errors import InvalidShape, IoError, ShapeMismatch


def test_zeros_2x2():
    z = tensor.zeros((2, 2))
    assert z.shape == (2, 2)
    assert np.array_equal(z, [[0.0, 0.0], [0.0, 0.0]])


def test_zeros_single():
    assert np.array_equal(tensor.zeros((1,)), [0.0])


def test_zeros_image_shape():
    z = tensor.zeros((3, 60, 60))
    assert z.size == 10800
    assert z.sum() == 0.0


def test_zeros_rejects_empty_shape():
    with pytest.raises(InvalidShape):
        tensor.zeros(())


def test_elementwise_add():
    out = tensor.elementwise(np.array([1.0, 2.0]), np.array([3.0, 4.0]), "add")
    assert np.array_equal(out, [4.0, 6.0])


def test_elementwise_mul_annihilator():
    x = np.arange(6.0).reshape(2, 3)
    assert np.array_equal(tensor.elementwise(x, np.zeros((2, 3)), "mul"),
                          np.zeros((2, 3)))


def test_elementwise_sub_self_is_zero():
    x = np.arange(6.0).reshape(2, 3) + 0.25
    assert np.array_equal(tensor.elementwise(x, x, "sub"), np.zeros((2, 3)))


def test_elementwise_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        tensor.elementwise(np.zeros(2), np.zeros(3), "add")


def test_elementwise_add_commutes_exactly():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(4, 5))
    b = rng.normal(size=(4, 5))
    ab = tensor.elementwise(a, b, "add")
    ba = tensor.elementwise(b, a, "add")
    assert np.array_equal(ab, ba)


def test_scale_examples():
    assert np.array_equal(tensor.scale(np.array([1.0, -2.0]), 0.5), [0.5, -1.0])
    x = np.arange(4.0)
    assert np.array_equal(tensor.scale(x, 1.0), x)
    assert np.array_equal(tensor.scale(x, 0.0), np.zeros(4))


def test_round_trip_bytes(tmp_path):
    rng = np.random.default_rng(0)
    for shape in ((3,), (2, 5), (3, 4, 5), (1, 1, 1, 7)):
        x = rng.normal(size=shape)
        p = tmp_path / "t.bin"
        with open(p, "wb") as f:
            tensor.write_tensor(f, x)
        with open(p, "rb") as f:
            y = tensor.read_tensor(f)
        assert y.shape == x.shape
        assert np.array_equal(x, y)
        assert x.tobytes() == y.tobytes()


def test_serialized_layout_is_little_endian(tmp_path):
    p = tmp_path / "t.bin"
    with open(p, "wb") as f:
        tensor.write_tensor(f, np.array([[1.0, 2.0], [3.0, 4.0]]))
    raw = p.read_bytes()
    ndim, d0, d1 = struct.unpack("<III", raw[:12])
    assert (ndim, d0, d1) == (2, 2, 2)
    vals = struct.unpack("<4d", raw[12:])
    assert vals == (1.0, 2.0, 3.0, 4.0)


def test_read_truncated_payload(tmp_path):
    p = tmp_path / "t.bin"
    with open(p, "wb") as f:
        tensor.write_tensor(f, np.arange(6.0).reshape(2, 3))
    raw = p.read_bytes()
    p.write_bytes(raw[:-4])
    with open(p, "rb") as f:
        with pytest.raises(IoError):
            tensor.read_tensor(f)


def test_read_truncated_header(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(b"\x02\x00")
    with open(p, "rb") as f:
        with pytest.raises(IoError):
            tensor.read_tensor(f)


def test_read_rejects_absurd_rank(tmp_path):
    p = tmp_path / "t.bin"
    p.write_bytes(struct.pack("<I", 4096))
    with open(p, "rb") as f:
        with pytest.raises(IoError):
            tensor.read_tensor(f)
