"""Differentiable operators on :class:`~mdir.tensor.Tensor`.

Image tensors are batched ``(N, C, H, W)``. Ops that the network applies to
single images (``conv2d``, ``unfold``, ``global_avg_pool``,
``bilinear_resize``, ``fft2``) also accept unbatched ``(C, H, W)`` input and
return an unbatched result.

Every backward closure returns one gradient per parent, or None for parents
that are constants.
"""
import numpy as np

from . import kernels
from .tensor import Tensor, as_tensor, make_result

BN_EPS = 1e-5


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _batched(x):
    """Lift (C, H, W) to (1, C, H, W); returns (tensor, was_unbatched)."""
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ValueError(f"expected a (C,H,W) or (N,C,H,W) tensor, got shape {x.shape}")
    return x, False


def _unbatch(y, flag):
    return reshape(y, y.shape[1:]) if flag else y


# ---------------------------------------------------------------- elementwise

def add(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return make_result(a.data + b.data, (a, b), backward)


def sub(a, b):
    a = as_tensor(a, like=b if isinstance(b, Tensor) else None)
    b = as_tensor(b, like=a)
    sa, sb = a.shape, b.shape

    def backward(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return make_result(a.data - b.data, (a, b), backward)


def mul(a, b):
    if not isinstance(b, Tensor):
        s = b

        def backward_scalar(g):
            return (g * s,)

        return make_result(a.data * s, (a,), backward_scalar)
    a = as_tensor(a, like=b)
    sa, sb = a.shape, b.shape

    def backward(g):
        ga = _unbroadcast(g * b.data, sa) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, sb) if b.requires_grad else None
        return ga, gb

    return make_result(a.data * b.data, (a, b), backward)


def power(x, p):
    def backward(g):
        return (g * p * x.data ** (p - 1),)

    return make_result(x.data ** p, (x,), backward)


def relu(x):
    mask = x.data > 0

    def backward(g):
        return (g * mask,)

    return make_result(x.data * mask, (x,), backward)


def tanh(x):
    y = np.tanh(x.data)

    def backward(g):
        return (g * (1 - y * y),)

    return make_result(y, (x,), backward)


def _sigmoid_np(z):
    # split by sign so exp never overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1 / (1 + np.exp(-z[pos]))
    e = np.exp(z[~pos])
    out[~pos] = e / (1 + e)
    return out


def sigmoid(x):
    y = _sigmoid_np(x.data)

    def backward(g):
        return (g * y * (1 - y),)

    return make_result(y, (x,), backward)


def abs(x):  # noqa: A001
    s = np.sign(x.data)

    def backward(g):
        return (g * s,)

    return make_result(np.abs(x.data), (x,), backward)


# ----------------------------------------------------------------- reductions

def sum(x):  # noqa: A001
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(g, shape).copy(),)

    return make_result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), backward)


def sum_axis(x, axis):
    shape = x.shape

    def backward(g):
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return make_result(x.data.sum(axis=axis), (x,), backward)


def mean(x):
    shape, n = x.shape, x.size

    def backward(g):
        return (np.full(shape, g / n, dtype=g.dtype),)

    return make_result(np.asarray(x.data.mean(), dtype=x.dtype), (x,), backward)


def l1_loss(a, b):
    """mean |a - b|."""
    return mean(abs(sub(a, b)))


# ---------------------------------------------------------------------- shape

def reshape(x, shape):
    old = x.shape

    def backward(g):
        return (g.reshape(old),)

    return make_result(x.data.reshape(shape), (x,), backward)


def concat(tensors, axis=1):
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return make_result(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), backward)


def split(x, sizes, axis=1):
    """Split along ``axis`` into consecutive pieces of the given sizes."""
    outs, lo = [], 0
    for s in sizes:
        outs.append(_take(x, axis, lo, lo + s))
        lo += s
    return outs


def _take(x, axis, lo, hi):
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(lo, hi)
    idx = tuple(idx)
    shape = x.shape

    def backward(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return make_result(x.data[idx], (x,), backward)


# ----------------------------------------------------------------- linear ops

def linear(x, weight, bias=None):
    """x: (N, F), weight: (O, F) -> (N, O)."""
    xd, wd = x.data, weight.data

    def backward(g):
        gx = g @ wd if x.requires_grad else None
        gw = g.T @ xd if weight.requires_grad else None
        gb = g.sum(axis=0) if bias is not None else None
        return (gx, gw, gb) if bias is not None else (gx, gw)

    out = xd @ wd.T
    if bias is not None:
        out = out + bias.data
        return make_result(out, (x, weight, bias), backward)
    return make_result(out, (x, weight), backward)


def conv2d(x, weight, bias=None, stride=1, padding=0):
    """Cross-correlation with zero padding.

    x: (N, C_in, H, W) or (C_in, H, W); weight: (C_out, C_in, k, k).
    Output spatial size is floor((H + 2p - k) / stride) + 1.
    """
    x, unb = _batched(x)
    N, C, H, W = x.shape
    O, Ci, k, k2 = weight.shape
    if Ci != C or k != k2:
        raise ValueError(f"conv2d: input has {C} channels, weight expects {Ci} (kernel {k}x{k2})")
    Ho, Wo = kernels.out_size(H, k, stride, padding), kernels.out_size(W, k, stride, padding)
    if Ho < 1 or Wo < 1:
        raise ValueError(f"conv2d: kernel {k} larger than padded input {H}x{W}")

    pointwise = k == 1 and stride == 1 and padding == 0
    if pointwise:
        P = x.data.transpose(0, 2, 3, 1).reshape(N * H * W, C)
    else:
        P = kernels.im2col(x.data, k, stride, padding)
    wm = weight.data.transpose(0, 2, 3, 1).reshape(O, k * k * C)
    out = (P @ wm.T).reshape(N, Ho, Wo, O).transpose(0, 3, 1, 2)
    if bias is not None:
        out = out + bias.data.reshape(1, O, 1, 1)
    out = np.ascontiguousarray(out)

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(N * Ho * Wo, O)
        gw = None
        if weight.requires_grad:
            gw = np.ascontiguousarray((g2.T @ P).reshape(O, k, k, C).transpose(0, 3, 1, 2))
        gx = None
        if x.requires_grad:
            gP = g2 @ wm
            if pointwise:
                gx = np.ascontiguousarray(gP.reshape(N, H, W, C).transpose(0, 3, 1, 2))
            else:
                gx = kernels.col2im(gP, (N, C, H, W), k, stride, padding)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _unbatch(make_result(out, parents, backward), unb)


def conv_transpose2x(x, weight, bias=None):
    """2x upsampling transposed convolution (kernel 2, stride 2).

    x: (N, C_in, H, W); weight: (C_in, C_out, 2, 2) -> (N, C_out, 2H, 2W).
    Output windows do not overlap, so this is exactly the adjoint of a
    kernel-2 stride-2 convolution.
    """
    N, C, H, W = x.shape
    Ci, O, _, _ = weight.shape
    if Ci != C:
        raise ValueError(f"conv_transpose2x: input has {C} channels, weight expects {Ci}")
    xm = x.data.transpose(0, 2, 3, 1).reshape(N * H * W, C)
    wm = weight.data.reshape(C, O * 4)
    y = (xm @ wm).reshape(N, H, W, O, 2, 2).transpose(0, 3, 1, 4, 2, 5).reshape(N, O, 2 * H, 2 * W)
    if bias is not None:
        y = y + bias.data.reshape(1, O, 1, 1)
    y = np.ascontiguousarray(y)

    def backward(g):
        gm = g.reshape(N, O, H, 2, W, 2).transpose(0, 2, 4, 1, 3, 5).reshape(N * H * W, O * 4)
        gx = (gm @ wm.T).reshape(N, H, W, C).transpose(0, 3, 1, 2) if x.requires_grad else None
        gw = (xm.T @ gm).reshape(weight.shape) if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make_result(y, parents, backward)


def unfold(x, k, padding=None):
    """Gather every k x k neighbourhood: (N, C, H, W) -> (N, C, k*k, Ho*Wo).

    With the default ``padding=(k-1)//2`` the output has one column per input
    pixel.
    """
    if k % 2 == 0 or k < 1:
        raise ValueError(f"unfold: kernel size must be odd and positive, got {k}")
    if padding is None:
        padding = (k - 1) // 2
    x, unb = _batched(x)
    N, C, H, W = x.shape
    Ho, Wo = kernels.out_size(H, k, 1, padding), kernels.out_size(W, k, 1, padding)
    P = kernels.im2col(x.data, k, 1, padding)
    out = np.ascontiguousarray(P.reshape(N, Ho * Wo, k * k, C).transpose(0, 3, 2, 1))

    def backward(g):
        gP = g.transpose(0, 3, 2, 1).reshape(N * Ho * Wo, k * k * C)
        return (kernels.col2im(gP, (N, C, H, W), k, 1, padding),)

    return _unbatch(make_result(out, (x,), backward), unb)


def fold(cols, output_size, k, padding=None, normalize=False):
    """Adjoint of :func:`unfold`; sums overlapping entries back into place.

    With ``normalize=True`` each pixel is divided by the number of columns
    that covered it, so ``fold(unfold(x), normalize=True) == x``.
    """
    if padding is None:
        padding = (k - 1) // 2
    cols, unb = (reshape(cols, (1,) + cols.shape), True) if cols.ndim == 3 else (cols, False)
    N, C, kk, L = cols.shape
    H, W = output_size
    P = cols.data.transpose(0, 3, 2, 1).reshape(N * L, kk * C)
    out = kernels.col2im(P, (N, C, H, W), k, 1, padding)
    scale = None
    if normalize:
        ones = np.ones((1, 1, H, W), dtype=out.dtype)
        count = kernels.col2im(kernels.im2col(ones, k, 1, padding), (1, 1, H, W), k, 1, padding)
        scale = 1.0 / count
        out = out * scale

    def backward(g):
        if scale is not None:
            g = g * scale
        gP = kernels.im2col(np.ascontiguousarray(g), k, 1, padding)
        return (np.ascontiguousarray(gP.reshape(N, L, kk, C).transpose(0, 3, 2, 1)),)

    return _unbatch(make_result(out, (cols,), backward), unb)


def dynamic_filter(x, w, k):
    """Per-sample, per-channel k x k filtering with zero padding.

    x: (N, C, H, W); w: (N, C, k*k). Equivalent to
    ``(w[..., None] * unfold(x, k)).sum(axis=2)`` reshaped to (N, C, H, W).
    """
    xd, wd = x.data, w.data

    def backward(g):
        gx, gw = kernels.dynamic_filter_backward(xd, wd, g, k)
        return gx, gw

    return make_result(kernels.dynamic_filter(xd, wd, k), (x, w), backward)


def global_avg_pool(x):
    """(N, C, H, W) -> (N, C, 1, 1) per-channel mean."""
    x, unb = _batched(x)
    N, C, H, W = x.shape

    def backward(g):
        return (np.broadcast_to(g / (H * W), x.shape).copy(),)

    out = x.data.mean(axis=(2, 3), keepdims=True)
    return _unbatch(make_result(out, (x,), backward), unb)


def batchnorm(x, gamma, beta, running_mean, running_var, training, momentum=0.1, eps=BN_EPS):
    """Batch normalization over (N, H, W) per channel.

    ``running_mean``/``running_var`` are numpy arrays updated in place in
    training mode (unbiased variance, as in common frameworks).
    """
    C = x.shape[1]
    axes = (0, 2, 3)
    shp = (1, C, 1, 1)
    if training:
        mu = x.data.mean(axis=axes, keepdims=True)
        var = ((x.data - mu) ** 2).mean(axis=axes, keepdims=True)
        m = x.data.size // C
        running_mean *= 1 - momentum
        running_mean += momentum * mu.reshape(C)
        running_var *= 1 - momentum
        running_var += momentum * var.reshape(C) * (m / max(m - 1, 1))
    else:
        mu = running_mean.reshape(shp).astype(x.dtype)
        var = running_var.reshape(shp).astype(x.dtype)
        m = None
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    gd, bd = gamma.data.reshape(shp), beta.data.reshape(shp)
    out = gd * xhat + bd

    def backward(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gd
        if training:
            gx = inv * (gxhat - gxhat.mean(axis=axes, keepdims=True)
                        - xhat * (gxhat * xhat).mean(axis=axes, keepdims=True))
        else:
            gx = gxhat * inv
        return gx, gg, gb

    return make_result(out.astype(x.dtype), (x, gamma, beta), backward)


def resize_matrix(n_in, n_out, dtype=np.float64):
    """Linear interpolation matrix (n_out, n_in), half-pixel centres, edge clamp."""
    R = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        R[o, i0] += 1 - lam
        R[o, i1] += lam
    return R


def bilinear_resize(x, height, width):
    """Bilinear resampling to (height, width) with half-pixel centres."""
    if height < 1 or width < 1:
        raise ValueError("bilinear_resize: target size must be positive")
    x, unb = _batched(x)
    H, W = x.shape[2:]
    if (H, W) == (height, width):
        return _unbatch(x, unb)
    Rh = resize_matrix(H, height, x.dtype)
    Rw = resize_matrix(W, width, x.dtype)
    out = np.matmul(np.matmul(Rh, x.data), Rw.T)

    def backward(g):
        return (np.matmul(np.matmul(Rh.T, g), Rw),)

    return _unbatch(make_result(out, (x,), backward), unb)


def fft2(x):
    """Unnormalized 2-D DFT over the last two axes.

    Returns a real tensor of shape ``x.shape + (2,)`` holding (real, imag).
    The DC term equals the per-channel sum.
    """
    H, W = x.shape[-2:]
    f = np.fft.fft2(x.data)
    out = np.stack([f.real, f.imag], axis=-1).astype(x.dtype)

    def backward(g):
        gc = g[..., 0] + 1j * g[..., 1]
        return ((np.fft.ifft2(gc).real * (H * W)).astype(x.dtype),)

    return make_result(out, (x,), backward)


def fft2_magnitude(x):
    """|DFT| per channel (plain array, not differentiable)."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.abs(np.fft.fft2(data))


def bce_with_logits(logits, targets):
    """Mean binary cross-entropy computed in logit space.

    Uses max(z,0) - z*y + log(1 + exp(-|z|)), which never overflows.
    """
    z = logits.data
    y = np.asarray(targets.data if isinstance(targets, Tensor) else targets, dtype=z.dtype)
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    n = z.size

    def backward(g):
        return (g * (_sigmoid_np(z) - y) / n,)

    return make_result(np.asarray(loss.mean(), dtype=z.dtype), (logits,), backward)
