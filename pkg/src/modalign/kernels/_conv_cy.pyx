# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled conv2d kernels (stride 1). Same semantics as numpy_backend; the
inner loops run over contiguous rows with precomputed valid ranges so the C
compiler can vectorize them."""

import numpy as np
cimport numpy as cnp

ctypedef fused real:
    float
    double


cdef inline Py_ssize_t imax(Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    return a if a > b else b


cdef inline Py_ssize_t imin(Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    return a if a < b else b


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] k, int pad_h, int pad_w):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t o = k.shape[0], kh = k.shape[2], kw = k.shape[3]
    cdef Py_ssize_t oh = h + 2 * pad_h - kh + 1
    cdef Py_ssize_t ow = w + 2 * pad_w - kw + 1
    out_arr = np.zeros((b, o, oh, ow), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] y = out_arr
    cdef Py_ssize_t bi, oi, ci, i, j, u, v, xi, j0, j1, off
    cdef real kv
    with nogil:
        for bi in range(b):
            for oi in range(o):
                for ci in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            kv = k[oi, ci, u, v]
                            if kv == 0:
                                continue
                            # xj = j + v - pad_w must lie in [0, w)
                            j0 = imax(0, pad_w - v)
                            j1 = imin(ow, w + pad_w - v)
                            off = v - pad_w
                            for i in range(imax(0, pad_h - u), imin(oh, h + pad_h - u)):
                                xi = i + u - pad_h
                                for j in range(j0, j1):
                                    y[bi, oi, i, j] += kv * x[bi, ci, xi, j + off]
    return out_arr


def conv2d_grad_input(real[:, :, :, ::1] gy, real[:, :, :, ::1] k,
                      int pad_h, int pad_w, int h, int w):
    cdef Py_ssize_t b = gy.shape[0], o = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t c = k.shape[1], kh = k.shape[2], kw = k.shape[3]
    out_arr = np.zeros((b, c, h, w), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] gx = out_arr
    cdef Py_ssize_t bi, oi, ci, i, j, u, v, xi, j0, j1, off
    cdef real kv
    with nogil:
        for bi in range(b):
            for ci in range(c):
                for oi in range(o):
                    for u in range(kh):
                        for v in range(kw):
                            kv = k[oi, ci, u, v]
                            if kv == 0:
                                continue
                            j0 = imax(0, pad_w - v)
                            j1 = imin(ow, w + pad_w - v)
                            off = v - pad_w
                            for i in range(imax(0, pad_h - u), imin(oh, h + pad_h - u)):
                                xi = i + u - pad_h
                                for j in range(j0, j1):
                                    gx[bi, ci, xi, j + off] += kv * gy[bi, oi, i, j]
    return out_arr


def conv2d_grad_kernel(real[:, :, :, ::1] gy, real[:, :, :, ::1] x,
                       int kh, int kw, int pad_h, int pad_w):
    cdef Py_ssize_t b = gy.shape[0], o = gy.shape[1], oh = gy.shape[2], ow = gy.shape[3]
    cdef Py_ssize_t c = x.shape[1], h = x.shape[2], w = x.shape[3]
    out_arr = np.zeros((o, c, kh, kw), dtype=np.float32 if real is float else np.float64)
    cdef real[:, :, :, ::1] gk = out_arr
    cdef Py_ssize_t bi, oi, ci, i, j, u, v, xi, j0, j1, off
    cdef real acc
    with nogil:
        for oi in range(o):
            for ci in range(c):
                for u in range(kh):
                    for v in range(kw):
                        j0 = imax(0, pad_w - v)
                        j1 = imin(ow, w + pad_w - v)
                        off = v - pad_w
                        acc = 0
                        for bi in range(b):
                            for i in range(imax(0, pad_h - u), imin(oh, h + pad_h - u)):
                                xi = i + u - pad_h
                                for j in range(j0, j1):
                                    acc += gy[bi, oi, i, j] * x[bi, ci, xi, j + off]
                        gk[oi, ci, u, v] = acc
    return out_arr
