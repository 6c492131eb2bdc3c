# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled versions of the kernels in ``_reference``; same signatures and layout."""
import numpy as np
cimport numpy as cnp
from cython cimport floating

cnp.import_array()


def im2col_nhwc(const floating[:, :, :, ::1] xp, int k, int stride, Py_ssize_t Ho, Py_ssize_t Wo):
    """Rows of the patch matrix from a padded channels-last input."""
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[3]
    cdef Py_ssize_t span = k * C
    dtype = np.float32 if floating is float else np.float64
    out = np.empty((N * Ho * Wo, k * span), dtype=dtype)
    cdef floating[:, ::1] P = out
    cdef Py_ssize_t n, oy, ox, ki, t, row, iy, ix0
    cdef const floating* src
    cdef floating* dst
    row = 0
    for n in range(N):
        for oy in range(Ho):
            for ox in range(Wo):
                ix0 = ox * stride
                for ki in range(k):
                    iy = oy * stride + ki
                    src = &xp[n, iy, ix0, 0]
                    dst = &P[row, ki * span]
                    for t in range(span):
                        dst[t] = src[t]
                row += 1
    return out


def col2im_nhwc(const floating[:, ::1] P, floating[:, :, :, ::1] xp, int k, int stride,
                Py_ssize_t Ho, Py_ssize_t Wo):
    """Scatter-add patch rows into a zeroed padded channels-last buffer."""
    cdef Py_ssize_t N = xp.shape[0], C = xp.shape[3]
    cdef Py_ssize_t span = k * C
    cdef Py_ssize_t n, oy, ox, ki, t, row, iy, ix0
    cdef const floating* src
    cdef floating* dst
    row = 0
    for n in range(N):
        for oy in range(Ho):
            for ox in range(Wo):
                ix0 = ox * stride
                for ki in range(k):
                    iy = oy * stride + ki
                    src = &P[row, ki * span]
                    dst = &xp[n, iy, ix0, 0]
                    for t in range(span):
                        dst[t] += src[t]
                row += 1


def dynamic_filter(const floating[:, :, :, ::1] x, const floating[:, :, ::1] w, int k):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int p = (k - 1) // 2
    dtype = np.float32 if floating is float else np.float64
    res = np.zeros((N, C, H, W), dtype=dtype)
    cdef floating[:, :, :, ::1] out = res
    cdef Py_ssize_t n, c, ki, kj, y, xx, y0, y1, x0, x1
    cdef floating wv
    for n in range(N):
        for c in range(C):
            for ki in range(k):
                y0 = max(0, p - ki)
                y1 = min(H, H + p - ki)
                for kj in range(k):
                    wv = w[n, c, ki * k + kj]
                    x0 = max(0, p - kj)
                    x1 = min(W, W + p - kj)
                    for y in range(y0, y1):
                        for xx in range(x0, x1):
                            out[n, c, y, xx] += wv * x[n, c, y + ki - p, xx + kj - p]
    return res


def dynamic_filter_backward(const floating[:, :, :, ::1] x, const floating[:, :, ::1] w,
                            const floating[:, :, :, ::1] grad, int k):
    cdef Py_ssize_t N = x.shape[0], C = x.shape[1], H = x.shape[2], W = x.shape[3]
    cdef int p = (k - 1) // 2
    dtype = np.float32 if floating is float else np.float64
    gx_arr = np.zeros((N, C, H, W), dtype=dtype)
    gw_arr = np.zeros((N, C, k * k), dtype=dtype)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating[:, :, ::1] gw = gw_arr
    cdef Py_ssize_t n, c, ki, kj, y, xx, y0, y1, x0, x1
    cdef floating wv, g, acc
    for n in range(N):
        for c in range(C):
            for ki in range(k):
                y0 = max(0, p - ki)
                y1 = min(H, H + p - ki)
                for kj in range(k):
                    wv = w[n, c, ki * k + kj]
                    x0 = max(0, p - kj)
                    x1 = min(W, W + p - kj)
                    acc = 0
                    for y in range(y0, y1):
                        for xx in range(x0, x1):
                            g = grad[n, c, y, xx]
                            acc = acc + g * x[n, c, y + ki - p, xx + kj - p]
                            gx[n, c, y + ki - p, xx + kj - p] += wv * g
                    gw[n, c, ki * k + kj] = acc
    return gx_arr, gw_arr
