"""Pure numpy implementations of the hot kernels.

Patch-matrix layout used by im2col/col2im: one row per output pixel, ordered
(batch, out row, out col); columns ordered (kernel row, kernel col, channel).
A convolution is then one GEMM ``P @ W.transpose(0, 2, 3, 1).reshape(O, -1).T``.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def out_size(n, k, stride, pad):
    return (n + 2 * pad - k) // stride + 1


def pad_nhwc(x, pad):
    """(N, C, H, W) -> zero-padded channels-last copy (N, H+2p, W+2p, C)."""
    N, C, H, W = x.shape
    xp = np.zeros((N, H + 2 * pad, W + 2 * pad, C), dtype=x.dtype)
    xp[:, pad:pad + H, pad:pad + W, :] = x.transpose(0, 2, 3, 1)
    return xp


def im2col(x, k, stride, pad):
    N, C, H, W = x.shape
    Ho, Wo = out_size(H, k, stride, pad), out_size(W, k, stride, pad)
    xp = pad_nhwc(x, pad)
    win = sliding_window_view(xp, (k, k), axis=(1, 2))[:, ::stride, ::stride][:, :Ho, :Wo]
    # (N, Ho, Wo, C, k, k) -> (N, Ho, Wo, k, k, C)
    return np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(N * Ho * Wo, k * k * C)


def col2im(cols, shape, k, stride, pad):
    N, C, H, W = shape
    Ho, Wo = out_size(H, k, stride, pad), out_size(W, k, stride, pad)
    c6 = cols.reshape(N, Ho, Wo, k, k, C)
    xp = np.zeros((N, H + 2 * pad, W + 2 * pad, C), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            xp[:, i:i + stride * Ho:stride, j:j + stride * Wo:stride, :] += c6[:, :, :, i, j, :]
    return np.ascontiguousarray(xp[:, pad:pad + H, pad:pad + W, :].transpose(0, 3, 1, 2))


def dynamic_filter(x, w, k):
    """Depthwise filtering with one k*k kernel per (sample, channel).

    x: (N, C, H, W); w: (N, C, k*k). Zero padding keeps the spatial size.
    """
    N, C, H, W = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    out = np.zeros_like(x)
    for i in range(k):
        for j in range(k):
            out += w[:, :, i * k + j, None, None] * xp[:, :, i:i + H, j:j + W]
    return out


def dynamic_filter_backward(x, w, grad, k):
    N, C, H, W = x.shape
    p = (k - 1) // 2
    xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    gxp = np.zeros_like(xp)
    gw = np.empty_like(w)
    for i in range(k):
        for j in range(k):
            t = i * k + j
            gw[:, :, t] = np.einsum("nchw,nchw->nc", grad, xp[:, :, i:i + H, j:j + W])
            gxp[:, :, i:i + H, j:j + W] += w[:, :, t, None, None] * grad
    return gxp[:, :, p:p + H, p:p + W].copy(), gw
