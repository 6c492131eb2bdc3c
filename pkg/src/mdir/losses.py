"""Dual-domain L1 loss with multi-scale aggregation, plus PSNR and SSIM."""
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d

from . import ops
from .tensor import Tensor


@dataclass
class LossWeights:
    lambda_freq: float = 0.1
    scale_weights: list = field(default_factory=lambda: [1.0, 1.0, 1.0])

    def __post_init__(self):
        if self.lambda_freq < 0 or any(w < 0 for w in self.scale_weights):
            raise ValueError("loss weights must be non-negative")


def dual_domain_l1(pred, gt, lambda_freq=0.1):
    """mean|pred - gt| + lambda_freq * mean|DFT(pred) - DFT(gt)|.

    The frequency term averages the absolute differences of the real and
    imaginary parts over all (C, H, W, re/im) entries.
    """
    if pred.shape != gt.shape:
        raise ValueError(f"shape mismatch: {pred.shape} vs {gt.shape}")
    diff = ops.sub(pred, gt)
    loss = ops.mean(ops.abs(diff))
    if lambda_freq:
        # the DFT is linear, so DFT(pred) - DFT(gt) == DFT(pred - gt)
        loss = ops.add(loss, ops.mul(ops.mean(ops.abs(ops.fft2(diff))), lambda_freq))
    return loss


def gt_pyramid(gt, n_scales=3):
    """Ground truth at full, 1/2, 1/4 ... resolution via bilinear resize."""
    out = [gt]
    H, W = gt.shape[-2:]
    for s in range(1, n_scales):
        out.append(ops.bilinear_resize(gt, H >> s, W >> s))
    return out


def total_loss(predictions, gt, weights: LossWeights = None):
    weights = weights or LossWeights()
    gts = gt_pyramid(gt, len(predictions)) if isinstance(gt, Tensor) else gt
    loss = None
    for w, p, g in zip(weights.scale_weights, predictions, gts):
        term = ops.mul(dual_domain_l1(p, g, weights.lambda_freq), float(w))
        loss = term if loss is None else ops.add(loss, term)
    return loss


# -------------------------------------------------------------------- metrics

def _arr(x):
    return np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64)


def psnr(pred, gt, data_range=1.0):
    """PSNR in dB on images clipped to [0, data_range]; ``inf`` when identical."""
    p = np.clip(_arr(pred), 0, data_range)
    g = np.clip(_arr(gt), 0, data_range)
    mse = np.mean((p - g) ** 2)
    if mse == 0:
        return math.inf
    return float(10 * np.log10(data_range ** 2 / mse))


def gaussian_window(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def _filter_valid(img, win):
    # separable 'valid' correlation: filter then crop the borders
    r = len(win) // 2
    out = correlate1d(img, win, axis=0, mode="constant")
    out = correlate1d(out, win, axis=1, mode="constant")
    return out[r:img.shape[0] - r, r:img.shape[1] - r]


LUMA = np.array([0.299, 0.587, 0.114])


def to_gray(img):
    """BT.601 luma for RGB, the channel itself for single-channel input."""
    a = _arr(img)
    if a.ndim == 3:
        if a.shape[0] == 1:
            return a[0]
        if a.shape[0] != 3:
            raise ValueError(f"expected 1 or 3 channels, got {a.shape[0]}")
        return np.tensordot(LUMA, a, axes=(0, 0))
    if a.ndim == 2:
        return a
    raise ValueError(f"expected (C, H, W) or (H, W) image, got shape {a.shape}")


def ssim(pred, gt, data_range=1.0, win_size=11, sigma=1.5, k1=0.01, k2=0.03):
    """Mean SSIM on luma, 11x11 Gaussian window (sigma 1.5), valid region only."""
    x, y = to_gray(pred), to_gray(gt)
    if x.shape != y.shape:
        raise ValueError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < win_size:
        raise ValueError(f"image {x.shape} smaller than the {win_size}x{win_size} window")
    win = gaussian_window(win_size, sigma)
    c1, c2 = (k1 * data_range) ** 2, (k2 * data_range) ** 2
    mx, my = _filter_valid(x, win), _filter_valid(y, win)
    sxx = _filter_valid(x * x, win) - mx * mx
    syy = _filter_valid(y * y, win) - my * my
    sxy = _filter_valid(x * y, win) - mx * my
    num = (2 * mx * my + c1) * (2 * sxy + c2)
    den = (mx * mx + my * my + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))
