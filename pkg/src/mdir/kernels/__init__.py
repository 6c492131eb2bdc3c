"""Hot kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built and importable. Setting
``MDIR_PURE_PYTHON=1`` before import forces the numpy path. Both backends
accept float32 and float64 arrays and return the input dtype.

im2col returns the patch matrix (N*Ho*Wo, k*k*C): one row per output pixel,
columns ordered (kernel row, kernel col, channel).
"""
import os

import numpy as np

from . import _reference

try:
    from . import _fast as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKEND = "cython" if _compiled is not None and not os.environ.get("MDIR_PURE_PYTHON") else "numpy"

out_size = _reference.out_size


def _c(a):
    return np.ascontiguousarray(a)


def im2col(x, k, stride=1, pad=0):
    if BACKEND == "numpy":
        return _reference.im2col(x, k, stride, pad)
    N, C, H, W = x.shape
    Ho, Wo = out_size(H, k, stride, pad), out_size(W, k, stride, pad)
    return _compiled.im2col_nhwc(_reference.pad_nhwc(x, pad), k, stride, Ho, Wo)


def col2im(cols, shape, k, stride=1, pad=0):
    """Adjoint of :func:`im2col`: scatter-add rows back to (N, C, H, W)."""
    if BACKEND == "numpy":
        return _reference.col2im(cols, shape, k, stride, pad)
    N, C, H, W = shape
    Ho, Wo = out_size(H, k, stride, pad), out_size(W, k, stride, pad)
    xp = np.zeros((N, H + 2 * pad, W + 2 * pad, C), dtype=cols.dtype)
    _compiled.col2im_nhwc(_c(cols), xp, k, stride, Ho, Wo)
    return np.ascontiguousarray(xp[:, pad:pad + H, pad:pad + W, :].transpose(0, 3, 1, 2))


def dynamic_filter(x, w, k):
    impl = _reference if BACKEND == "numpy" else _compiled
    return impl.dynamic_filter(_c(x), _c(w), k)


def dynamic_filter_backward(x, w, grad, k):
    impl = _reference if BACKEND == "numpy" else _compiled
    return impl.dynamic_filter_backward(_c(x), _c(w), _c(grad), k)


def use_backend(name):
    """Switch backend at runtime ("cython" or "numpy")."""
    global BACKEND
    if name == "cython" and _compiled is None:
        raise RuntimeError("compiled kernels are not available")
    if name not in ("cython", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    BACKEND = name
