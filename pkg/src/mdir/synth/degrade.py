"""Degradation formulas and the procedural maps they consume.

Images are float arrays (3, H, W) in [0, 1]. Every random quantity comes from
a ``numpy.random.Generator`` so an image is reproducible from its spec.
"""
from dataclasses import asdict, dataclass

import numpy as np
from scipy.ndimage import zoom

from .guided import guided_filter

BASE_TYPES = ("rain", "snow", "haze", "noise")
# mixed types are applied in this order
APPLY_ORDER = ("rain", "haze", "noise")
CATEGORIES = {
    "haze": ("haze",),
    "h+n": ("haze", "noise"),
    "noise": ("noise",),
    "rain": ("rain",),
    "r+h": ("rain", "haze"),
    "r+h+n": ("rain", "haze", "noise"),
    "snow": ("snow",),
}
SNOW_INTENSITY = 1.01
L_FLOOR = 0.05
LUMA = np.array([0.299, 0.587, 0.114])


class DegradationError(ValueError):
    pass


@dataclass
class DegradationSpec:
    types: tuple
    alpha_illum: float = 2.5
    sigma: float = 0.05
    beta_haze: float = 1.5
    A: float = 0.75
    snow_intensity: float = SNOW_INTENSITY
    rain_density: float = 0.04
    snow_density: float = 0.004
    seed: int = 0

    def __post_init__(self):
        self.types = validate_types(self.types)

    def to_dict(self):
        d = asdict(self)
        d["types"] = list(self.types)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


def validate_types(types):
    """Check a degradation set; returns it in application order."""
    types = tuple(types)
    if not types:
        raise DegradationError("empty degradation set")
    unknown = set(types) - set(BASE_TYPES)
    if unknown:
        raise DegradationError(f"unknown degradation(s) {sorted(unknown)}")
    if len(set(types)) != len(types):
        raise DegradationError(f"repeated degradation in {types}")
    if "snow" in types:
        if len(types) > 1:
            raise DegradationError("snow is never mixed with other degradations")
        return types
    ordered = tuple(t for t in APPLY_ORDER if t in types)
    if ordered not in CATEGORIES.values():
        raise DegradationError(f"unsupported combination {types}")
    return ordered


def sample_spec(types, rng, seed=0, rain_density=0.04, snow_density=0.004):
    return DegradationSpec(
        types=tuple(types),
        alpha_illum=float(rng.uniform(2.0, 3.0)),
        sigma=float(rng.uniform(0.03, 0.08)),
        beta_haze=float(rng.uniform(1.0, 2.0)),
        A=float(rng.uniform(0.6, 0.9)),
        rain_density=rain_density,
        snow_density=snow_density,
        seed=int(seed),
    )


# ------------------------------------------------------------------- maps

def luminance(img):
    return np.tensordot(LUMA, img, axes=(0, 0))


def illumination_map(img, radius=8, eps=1e-3):
    """Guided-filter-smoothed max-RGB map, guided by luminance, floored at 0.05."""
    L = guided_filter(luminance(img), img.max(axis=0), radius, eps)
    return np.clip(L, L_FLOOR, 1.0)


def transmittance(depth, beta):
    return np.exp(-beta * depth)


def depth_map(height, width, rng, noise_amp=0.3, grid=4):
    """Vertical gradient (far at the top) plus smooth noise, scaled to [0, 1]."""
    ramp = np.linspace(1.0, 0.0, height)[:, None] * np.ones((1, width))
    coarse = rng.standard_normal((grid, grid))
    smooth = zoom(coarse, (height / grid, width / grid), order=1, mode="nearest")[:height, :width]
    d = ramp + noise_amp * smooth
    lo, hi = d.min(), d.max()
    return (d - lo) / (hi - lo) if hi > lo else np.zeros_like(d)


def _draw_streak(height, width, y, x, length, angle):
    """Binary 1-px streak: anti-aliased splat along the line, smeared along
    its direction, thresholded at 0.5."""
    acc = np.zeros((height, width))
    dy, dx = np.sin(angle), np.cos(angle)
    for t in np.linspace(0, length, int(length * 4) + 1):
        py, px = y + t * dy, x + t * dx
        iy, ix = int(np.floor(py)), int(np.floor(px))
        fy, fx = py - iy, px - ix
        for oy, ox, wgt in ((0, 0, (1 - fy) * (1 - fx)), (1, 0, fy * (1 - fx)),
                            (0, 1, (1 - fy) * fx), (1, 1, fy * fx)):
            yy, xx = iy + oy, ix + ox
            if 0 <= yy < height and 0 <= xx < width:
                acc[yy, xx] = max(acc[yy, xx], wgt)
    # motion smear: average each pixel with its neighbours along the streak
    sy, sx = int(round(dy)), int(round(dx))
    sm = acc.copy()
    sm[max(sy, 0):height + min(sy, 0), max(sx, 0):width + min(sx, 0)] += \
        acc[max(-sy, 0):height + min(-sy, 0), max(-sx, 0):width + min(-sx, 0)]
    sm[max(-sy, 0):height + min(-sy, 0), max(-sx, 0):width + min(-sx, 0)] += \
        acc[max(sy, 0):height + min(sy, 0), max(sx, 0):width + min(sx, 0)]
    return (np.maximum(acc, sm / 3) >= 0.5).astype(np.float64)


def rain_mask(height, width, rng, density=0.04, max_streaks=10000):
    """Binary rain-streak mask; streaks are added until the covered pixel
    fraction reaches ``density``.

    Streaks start at random points, are 8-24 px long and tilted 70-110
    degrees from horizontal.
    """
    m = np.zeros((height, width))
    target = density * height * width
    for _ in range(max_streaks):
        if m.sum() >= target:
            break
        y, x = rng.uniform(-8, height), rng.uniform(0, width)
        length = rng.uniform(8, 24)
        angle = np.deg2rad(rng.uniform(70, 110))
        m = np.maximum(m, _draw_streak(height, width, y, x, length, angle))
    return m


def snow_mask(height, width, rng, density=0.004, max_tries=200):
    """Anti-aliased snow flakes (disks of radius 1-4 px) at ``density`` flakes
    per pixel. Flakes never touch, so each is one connected component."""
    n = int(round(density * height * width))
    flakes = []
    for _ in range(n):
        for _ in range(max_tries):
            r = rng.uniform(1.0, 4.0)
            cy, cx = rng.uniform(0, height), rng.uniform(0, width)
            if all((cy - y) ** 2 + (cx - x) ** 2 > (r + q + 2.5) ** 2 for y, x, q in flakes):
                flakes.append((cy, cx, r))
                break
    yy, xx = np.mgrid[0:height, 0:width] + 0.5
    m = np.zeros((height, width))
    for cy, cx, r in flakes:
        cov = np.clip(r + 0.5 - np.hypot(yy - cy, xx - cx), 0.0, 1.0)
        m = np.maximum(m, cov)
    return m


# ------------------------------------------------------------- formulas

def apply_noise(img, L, alpha, sigma, rng=None):
    """clip(I / L * L**alpha + N(0, sigma), 0, 1); noise independent per channel."""
    out = img / L * L ** alpha
    if sigma:
        out = out + rng.normal(0.0, sigma, size=img.shape)
    return np.clip(out, 0.0, 1.0)


def apply_haze(img, depth, beta, A):
    t = transmittance(depth, beta)
    return img * t + A * (1 - t)


def apply_rain(img, mask):
    return np.clip(img + mask, 0.0, 1.0)


def apply_snow(img, mask, intensity=SNOW_INTENSITY):
    return np.clip(img * (1 - mask) + intensity * mask, 0.0, 1.0)


@dataclass
class SceneMaps:
    depth: np.ndarray = None
    rain: np.ndarray = None
    snow: np.ndarray = None
    illumination: np.ndarray = None


def apply_mixed(img, spec: DegradationSpec, depth=None, return_maps=False):
    """Degrade ``img`` according to ``spec``.

    Rain, haze and noise are applied in that order, all randomness drawn from
    one generator seeded by ``spec.seed``. Snow is only used alone.
    """
    validate_types(spec.types)
    rng = np.random.default_rng(spec.seed)
    H, W = img.shape[1:]
    maps = SceneMaps()
    out = np.asarray(img, dtype=np.float64)
    if "snow" in spec.types:
        maps.snow = snow_mask(H, W, rng, spec.snow_density)
        out = apply_snow(out, maps.snow, spec.snow_intensity)
    if "rain" in spec.types:
        maps.rain = rain_mask(H, W, rng, spec.rain_density)
        out = apply_rain(out, maps.rain)
    if "haze" in spec.types:
        maps.depth = depth if depth is not None else depth_map(H, W, rng)
        out = apply_haze(out, maps.depth, spec.beta_haze, spec.A)
    if "noise" in spec.types:
        maps.illumination = illumination_map(out)
        out = apply_noise(out, maps.illumination, spec.alpha_illum, spec.sigma, rng)
    return (out, maps) if return_maps else out
