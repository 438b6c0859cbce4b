"""NumPy fallback kernels.

Same contracts as the compiled core: batched C-contiguous float64 arrays
in (N, C, H, W) layout, validated by the callers in :mod:`attrivis.nn`.
Convolutions are im2col + BLAS; pooling records the flat spatial index
(row * width + col) of each window maximum, first occurrence winning ties.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, OH, OW, kh, kw) strided view over the (possibly padded) input
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _pad(x: np.ndarray, pad: int) -> np.ndarray:
    if pad == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv_forward(x, w, b, stride, pad):
    n = x.shape[0]
    co, ci, kh, kw = w.shape
    win = _windows(_pad(x, pad), kh, kw, stride)
    oh, ow = win.shape[2], win.shape[3]
    cols = win.reshape(n, ci, oh * ow, kh * kw)
    # (N, OH*OW, Ci*kh*kw) @ (Ci*kh*kw, Co)
    cols = cols.transpose(0, 2, 1, 3).reshape(n, oh * ow, ci * kh * kw)
    out = cols @ w.reshape(co, ci * kh * kw).T + b
    return np.ascontiguousarray(out.transpose(0, 2, 1).reshape(n, co, oh, ow))


def conv_backward(grad_out, x, w, stride, pad):
    n = x.shape[0]
    co, ci, kh, kw = w.shape
    oh, ow = grad_out.shape[2], grad_out.shape[3]
    go = grad_out.transpose(0, 2, 3, 1).reshape(n, oh * ow, co)

    win = _windows(_pad(x, pad), kh, kw, stride)
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(n, oh * ow, ci * kh * kw)
    gw = np.zeros((co, ci * kh * kw))
    for i in range(n):
        gw += go[i].T @ cols[i]
    gb = grad_out.sum(axis=(0, 2, 3))
    gx = conv_input_grad(grad_out, w, x.shape[2], x.shape[3], stride, pad)
    return gx, gw.reshape(co, ci, kh, kw), np.ascontiguousarray(gb)


def conv_input_grad(grad_out, w, in_h, in_w, stride, pad):
    """Transposed convolution: scatter grad_out back through the filters."""
    n, co, oh, ow = grad_out.shape
    _, ci, kh, kw = w.shape
    go = grad_out.transpose(0, 2, 3, 1).reshape(n * oh * ow, co)
    # (N*OH*OW, Ci, kh, kw) contributions of every output position
    patches = (go @ w.reshape(co, ci * kh * kw)).reshape(n, oh, ow, ci, kh, kw)
    gxp = np.zeros((n, ci, in_h + 2 * pad, in_w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += (
                patches[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    if pad:
        gxp = gxp[:, :, pad:-pad, pad:-pad]
    return np.ascontiguousarray(gxp)


def maxpool_forward(x, window, stride):
    n, c, h, w = x.shape
    win = _windows(x, window, window, stride)
    oh, ow = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, oh, ow, window * window)
    rel = flat.argmax(axis=4)  # first max wins ties
    out = np.take_along_axis(flat, rel[..., None], axis=4)[..., 0]
    # relative (kh, kw) -> absolute flat spatial index in the input plane
    base_r = np.arange(oh)[:, None] * stride
    base_c = np.arange(ow)[None, :] * stride
    switches = (base_r + rel // window) * w + (base_c + rel % window)
    return np.ascontiguousarray(out), np.ascontiguousarray(switches.astype(np.int64))


def maxpool_scatter(vals, switches, in_h, in_w):
    """Place each value at its recorded flat index, accumulating collisions."""
    n, c = vals.shape[0], vals.shape[1]
    out = np.zeros((n, c, in_h * in_w))
    ni = np.arange(n)[:, None, None, None]
    ci = np.arange(c)[None, :, None, None]
    np.add.at(out, (ni, ci, switches), vals)
    return out.reshape(n, c, in_h, in_w)
