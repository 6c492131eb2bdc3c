"""Slow, obviously-correct reference implementations used by the tests."""
import numpy as np


def naive_depthwise(x, W, k):
    """x (N, C, H, W), W (N, C, k*k): zero-padded per-channel correlation."""
    N, C, H, Wd = x.shape
    r = k // 2
    out = np.zeros((N, C, H, Wd))
    for n in range(N):
        for c in range(C):
            for i in range(H):
                for j in range(Wd):
                    acc = 0.0
                    for a in range(k):
                        for b in range(k):
                            y, z = i + a - r, j + b - r
                            if 0 <= y < H and 0 <= z < Wd:
                                acc += W[n, c, a * k + b] * x[n, c, y, z]
                    out[n, c, i, j] = acc
    return out


def randomize_zero_weights(net, rng, scale=0.05):
    """Give zero-initialised weights (heads, LDO-unit convs, CFE projections)
    random values, so gradients and identities are tested on a generic net."""
    for name, p in net.named_parameters():
        if name.endswith("weight") and not np.any(p.data):
            p.data[...] = rng.standard_normal(p.shape) * scale
    return net
