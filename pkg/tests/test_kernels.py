"""Backend agreement: the compiled kernels must match the numpy reference
on every supported stride/pad combination, and both must match a brute-force
convolution written with no cleverness at all."""
import numpy as np
import pytest

from attrivis._kernels import _ref

_core = pytest.importorskip("attrivis._kernels._core",
                            reason="compiled kernels not built")

BACKENDS = [("ref", _ref), ("core", _core)]


def brute_conv(x, w, b, stride, pad):
    n, ci, h, wd = x.shape
    co, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, co, oh, ow))
    for i in range(n):
        for f in range(co):
            for r in range(oh):
                for q in range(ow):
                    patch = xp[i, :, r * stride:r * stride + kh,
                               q * stride:q * stride + kw]
                    out[i, f, r, q] = (patch * w[f]).sum() + b[f]
    return out


@pytest.mark.parametrize("name,mod", BACKENDS)
@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (1, 2), (2, 0), (2, 1), (3, 2)])
def test_conv_forward_matches_brute_force(name, mod, stride, pad):
    rng = np.random.default_rng(17)
    x = rng.normal(size=(2, 3, 8, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    got = mod.conv_forward(x, w, b, stride, pad)
    want = brute_conv(x, w, b, stride, pad)
    assert got.shape == want.shape
    np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 0), (2, 1), (3, 2)])
def test_backends_agree_on_conv_gradients(stride, pad):
    rng = np.random.default_rng(5)
    x = rng.normal(size=(3, 2, 9, 9))
    w = rng.normal(size=(4, 2, 3, 3))
    b = rng.normal(size=4)
    out = _ref.conv_forward(x, w, b, stride, pad)
    go = rng.normal(size=out.shape)

    gx_r, gw_r, gb_r = _ref.conv_backward(go, x, w, stride, pad)
    gx_c, gw_c, gb_c = _core.conv_backward(go, x, w, stride, pad)
    np.testing.assert_allclose(gx_r, gx_c, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(gw_r, gw_c, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(gb_r, gb_c, rtol=1e-12, atol=1e-12)

    ig_r = _ref.conv_input_grad(go, w, 9, 9, stride, pad)
    ig_c = _core.conv_input_grad(go, w, 9, 9, stride, pad)
    np.testing.assert_allclose(ig_r, ig_c, rtol=1e-12, atol=1e-12)


@pytest.mark.parametrize("name,mod", BACKENDS)
def test_maxpool_switch_on_constant_input_is_window_origin(name, mod):
    x = np.ones((1, 1, 4, 4))
    out, sw = mod.maxpool_forward(x, 2, 2)
    assert out.shape == (1, 1, 2, 2)
    # flat index of each window's top-left corner in the 4x4 plane
    assert sw[0, 0].tolist() == [[0, 2], [8, 10]]


def test_backends_agree_on_maxpool_ties_and_values():
    rng = np.random.default_rng(11)
    x = rng.integers(0, 3, size=(2, 3, 6, 6)).astype(np.float64)  # many ties
    for window, stride in ((2, 2), (3, 3), (2, 1)):
        out_r, sw_r = _ref.maxpool_forward(x, window, stride)
        out_c, sw_c = _core.maxpool_forward(x, window, stride)
        assert np.array_equal(out_r, out_c)
        assert np.array_equal(sw_r, sw_c)


def test_backends_agree_on_scatter():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(2, 2, 6, 6))
    out, sw = _ref.maxpool_forward(x, 2, 2)
    vals = rng.normal(size=out.shape)
    s_r = _ref.maxpool_scatter(vals, sw, 6, 6)
    s_c = _core.maxpool_scatter(vals, sw, 6, 6)
    assert np.array_equal(s_r, s_c)


def test_scatter_accumulates_on_colliding_switches():
    vals = np.ones((1, 1, 2, 2))
    sw = np.zeros((1, 1, 2, 2), dtype=np.int64)  # all four point at index 0
    for mod in (_ref, _core):
        out = mod.maxpool_scatter(vals, sw, 3, 3)
        assert out[0, 0, 0, 0] == 4.0
        assert out.sum() == 4.0


def test_backend_selector_honors_env(monkeypatch):
    import importlib

    import attrivis._kernels as K

    monkeypatch.setenv("ATTRIVIS_BACKEND", "numpy")
    mod = importlib.reload(K)
    assert mod.BACKEND == "numpy"
    monkeypatch.setenv("ATTRIVIS_BACKEND", "compiled")
    mod = importlib.reload(K)
    assert mod.BACKEND == "compiled"
    monkeypatch.setenv("ATTRIVIS_BACKEND", "no-such-backend")
    with pytest.raises(ValueError):
        importlib.reload(K)
    monkeypatch.delenv("ATTRIVIS_BACKEND")
    importlib.reload(K)
