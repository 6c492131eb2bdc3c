"""Procedural clean images for tests and desk-scale runs.

Any directory of real photos can replace these. They mimic what matters for
the degradations: texture at every depth (so haze has detail to wash out),
sharp edges, saturated colours, dark and bright regions.
"""
import numpy as np
from scipy.ndimage import gaussian_filter, zoom


def _noise_field(rng, size, grid):
    f = zoom(rng.standard_normal((grid, grid)), size / grid, order=1)
    return f[:size, :size]


def _texture(rng, size, octaves=(4, 8, 16)):
    t = sum(_noise_field(rng, size, g) / (1 + i) for i, g in enumerate(octaves))
    return t / (np.abs(t).max() + 1e-8)


def make_scene(size, rng):
    H = W = size
    yy, xx = np.mgrid[0:H, 0:W] / size
    horizon = rng.uniform(0.15, 0.45)

    sky_top = rng.uniform(0.35, 0.9, size=3)[:, None, None]
    sky = sky_top * (0.75 + 0.25 * yy / max(horizon, 1e-3)) + 0.05 * _texture(rng, size, (2, 4))
    ground_col = rng.uniform(0.1, 0.7, size=3)[:, None, None]
    ground = ground_col * (1 + 0.5 * _texture(rng, size)) + 0.06 * rng.standard_normal((3, H, W))
    img = np.where(yy < horizon, sky, ground)

    # far skyline: a jagged band just above the horizon
    ridge = horizon - rng.uniform(0.05, 0.2) * (0.5 + 0.5 * _noise_field(rng, size, 6)[0])
    far = rng.uniform(0.1, 0.6, size=3)[:, None, None] * (1 + 0.4 * _texture(rng, size, (8, 16)))
    img = np.where((yy >= ridge[None, :]) & (yy < horizon), far, img)

    for _ in range(rng.integers(5, 10)):
        col = rng.uniform(0.0, 1.0, size=3)[:, None, None]
        cy, cx = rng.uniform(horizon - 0.1, 1.0), rng.uniform(0, 1)
        if rng.random() < 0.5:
            h, w = rng.uniform(0.08, 0.35), rng.uniform(0.05, 0.25)
            inside = (np.abs(yy - cy) < h / 2) & (np.abs(xx - cx) < w / 2)
        else:
            ry, rx = rng.uniform(0.04, 0.18), rng.uniform(0.04, 0.18)
            inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 < 1
        shade = 0.75 + 0.25 * np.sin(2 * np.pi * (xx * rng.uniform(2, 10) + yy * rng.uniform(2, 10)))
        img = np.where(inside, col * shade, img)

    img = gaussian_filter(img, sigma=(0, 0.5, 0.5))
    return np.clip(img, 0.0, 1.0)


def make_scenes(n, size, seed=0):
    return [make_scene(size, np.random.default_rng([seed, i])) for i in range(n)]
