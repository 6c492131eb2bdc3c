"""Edge-preserving guided filter (He et al.) using cumulative-sum box means."""
import numpy as np


def box_mean(img, r):
    """Mean over the (2r+1)^2 window clipped to the image, per pixel."""
    H, W = img.shape

    def _sum(a):
        c = np.cumsum(np.cumsum(np.pad(a, ((1, 0), (1, 0))), axis=0), axis=1)
        y0 = np.clip(np.arange(H) - r, 0, H)
        y1 = np.clip(np.arange(H) + r + 1, 0, H)
        x0 = np.clip(np.arange(W) - r, 0, W)
        x1 = np.clip(np.arange(W) + r + 1, 0, W)
        return (c[y1][:, x1] - c[y0][:, x1] - c[y1][:, x0] + c[y0][:, x0])

    return _sum(img) / _sum(np.ones_like(img))


def guided_filter(guide, src, radius=8, eps=1e-3):
    guide = np.asarray(guide, dtype=np.float64)
    src = np.asarray(src, dtype=np.float64)
    mI = box_mean(guide, radius)
    mp = box_mean(src, radius)
    cov = box_mean(guide * src, radius) - mI * mp
    var = box_mean(guide * guide, radius) - mI * mI
    a = cov / (var + eps)
    b = mp - a * mI
    return box_mean(a, radius) * guide + box_mean(b, radius)
