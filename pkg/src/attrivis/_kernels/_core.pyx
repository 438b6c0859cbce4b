# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels. Same contracts as _ref.py; sums may differ from the
numpy backend by float reassociation only (parity tests pin the tolerance)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def _padded(x, Py_ssize_t pad):
    if pad == 0:
        return np.ascontiguousarray(x)
    return np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))


def conv_forward(x, double[:, :, :, ::1] w, double[::1] b, int stride, int pad):
    cdef double[:, :, :, ::1] xp = _padded(x, pad)
    cdef Py_ssize_t n = xp.shape[0], ci = xp.shape[1]
    cdef Py_ssize_t hp = xp.shape[2], wp = xp.shape[3]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = (hp - kh) // stride + 1
    cdef Py_ssize_t ow = (wp - kw) // stride + 1
    out_arr = np.empty((n, co, oh, ow))
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t i, f, c, r, q, u, v
    cdef double wv, bias
    with nogil:
        for i in range(n):
            for f in range(co):
                bias = b[f]
                for r in range(oh):
                    for q in range(ow):
                        out[i, f, r, q] = bias
                for c in range(ci):
                    for u in range(kh):
                        for v in range(kw):
                            wv = w[f, c, u, v]
                            if stride == 1:
                                for r in range(oh):
                                    for q in range(ow):
                                        out[i, f, r, q] += (
                                            wv * xp[i, c, r + u, q + v])
                            else:
                                for r in range(oh):
                                    for q in range(ow):
                                        out[i, f, r, q] += (
                                            wv * xp[i, c, r * stride + u,
                                                    q * stride + v])
    return out_arr


def conv_input_grad(double[:, :, :, ::1] grad_out, double[:, :, :, ::1] w,
                    int in_h, int in_w, int stride, int pad):
    cdef Py_ssize_t n = grad_out.shape[0], co = grad_out.shape[1]
    cdef Py_ssize_t oh = grad_out.shape[2], ow = grad_out.shape[3]
    cdef Py_ssize_t ci = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    gxp_arr = np.zeros((n, ci, in_h + 2 * pad, in_w + 2 * pad))
    cdef double[:, :, :, ::1] gxp = gxp_arr
    cdef Py_ssize_t i, f, c, r, q, u, v
    cdef double wv
    with nogil:
        for i in range(n):
            for f in range(co):
                for c in range(ci):
                    for u in range(kh):
                        for v in range(kw):
                            wv = w[f, c, u, v]
                            if stride == 1:
                                for r in range(oh):
                                    for q in range(ow):
                                        gxp[i, c, r + u, q + v] += (
                                            wv * grad_out[i, f, r, q])
                            else:
                                for r in range(oh):
                                    for q in range(ow):
                                        gxp[i, c, r * stride + u,
                                            q * stride + v] \
                                            += wv * grad_out[i, f, r, q]
    if pad == 0:
        return gxp_arr
    return np.ascontiguousarray(gxp_arr[:, :, pad:pad + in_h, pad:pad + in_w])


def conv_backward(double[:, :, :, ::1] grad_out, x,
                  double[:, :, :, ::1] w, int stride, int pad):
    cdef double[:, :, :, ::1] xp = _padded(x, pad)
    cdef Py_ssize_t n = xp.shape[0], ci = xp.shape[1]
    cdef Py_ssize_t co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t oh = grad_out.shape[2], ow = grad_out.shape[3]
    cdef Py_ssize_t h = xp.shape[2] - 2 * pad, wd = xp.shape[3] - 2 * pad
    gw_arr = np.zeros((co, ci, kh, kw))
    gb_arr = np.zeros(co)
    cdef double[:, :, :, ::1] gw = gw_arr
    cdef double[::1] gb = gb_arr
    cdef Py_ssize_t i, f, c, r, q, u, v
    cdef double acc, a0, a1, a2, a3, gbacc
    with nogil:
        for i in range(n):
            for f in range(co):
                gbacc = 0.0
                for r in range(oh):
                    for q in range(ow):
                        gbacc += grad_out[i, f, r, q]
                gb[f] += gbacc
                for c in range(ci):
                    for u in range(kh):
                        for v in range(kw):
                            a0 = a1 = a2 = a3 = 0.0
                            if stride == 1:
                                for r in range(oh):
                                    q = 0
                                    while q + 4 <= ow:
                                        a0 += (grad_out[i, f, r, q]
                                               * xp[i, c, r + u, q + v])
                                        a1 += (grad_out[i, f, r, q + 1]
                                               * xp[i, c, r + u, q + 1 + v])
                                        a2 += (grad_out[i, f, r, q + 2]
                                               * xp[i, c, r + u, q + 2 + v])
                                        a3 += (grad_out[i, f, r, q + 3]
                                               * xp[i, c, r + u, q + 3 + v])
                                        q += 4
                                    while q < ow:
                                        a0 += (grad_out[i, f, r, q]
                                               * xp[i, c, r + u, q + v])
                                        q += 1
                            else:
                                for r in range(oh):
                                    for q in range(ow):
                                        a0 += (grad_out[i, f, r, q]
                                               * xp[i, c, r * stride + u,
                                                    q * stride + v])
                            gw[f, c, u, v] += (a0 + a1) + (a2 + a3)
    gx = conv_input_grad(grad_out, w, <int>h, <int>wd, stride, pad)
    return gx, gw_arr, gb_arr


def maxpool_forward(double[:, :, :, ::1] x, int window, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h - window) // stride + 1
    cdef Py_ssize_t ow = (w - window) // stride + 1
    out_arr = np.empty((n, c, oh, ow))
    sw_arr = np.empty((n, c, oh, ow), dtype=np.int64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef long long[:, :, :, ::1] sw = sw_arr
    cdef Py_ssize_t i, j, r, q, u, v, ir, ic, best_r, best_c
    cdef double best, cur
    with nogil:
        for i in range(n):
            for j in range(c):
                for r in range(oh):
                    for q in range(ow):
                        best_r = r * stride
                        best_c = q * stride
                        best = x[i, j, best_r, best_c]
                        for u in range(window):
                            ir = r * stride + u
                            for v in range(window):
                                ic = q * stride + v
                                cur = x[i, j, ir, ic]
                                if cur > best:
                                    best = cur
                                    best_r = ir
                                    best_c = ic
                        out[i, j, r, q] = best
                        sw[i, j, r, q] = best_r * w + best_c
    return out_arr, sw_arr


def maxpool_scatter(double[:, :, :, ::1] vals, long long[:, :, :, ::1] switches,
                    int in_h, int in_w):
    cdef Py_ssize_t n = vals.shape[0], c = vals.shape[1]
    cdef Py_ssize_t oh = vals.shape[2], ow = vals.shape[3]
    out_arr = np.zeros((n, c, in_h, in_w))
    cdef double[:, :, ::1] out = out_arr.reshape(n, c, in_h * in_w)
    cdef Py_ssize_t i, j, r, q
    with nogil:
        for i in range(n):
            for j in range(c):
                for r in range(oh):
                    for q in range(ow):
                        out[i, j, switches[i, j, r, q]] += vals[i, j, r, q]
    return out_arr
