"""Procedural test scenes."""
from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter

from .image import Image


def smooth_texture(size: int, sigma: float = 2.0, seed: int = 0, channels: int = 1) -> Image:
    """Gaussian-filtered uniform noise rescaled to [0, 1] per channel."""
    rng = np.random.default_rng(seed)
    planes = []
    for _ in range(channels):
        a = gaussian_filter(rng.random((size, size)), sigma, mode="wrap")
        planes.append((a - a.min()) / (a.max() - a.min()))
    return Image(np.stack(planes))


def standard_scene(size: int = 128, seed: int = 0) -> Image:
    """Colored scene: shaded background, random rectangles and disks and a
    grating patch (lightly anti-aliased), overlaid with fine band-limited
    texture. Values stay inside [0.02, 0.98]."""
    rng = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = np.empty((3, size, size))
    base = rng.uniform(0.3, 0.6, 3)
    for c in range(3):
        img[c] = base[c] + 0.2 * (xx - 0.5) * rng.uniform(-1, 1) + 0.2 * (yy - 0.5) * rng.uniform(-1, 1)
    for _ in range(28):
        color = rng.uniform(0.1, 0.9, 3)
        if rng.random() < 0.5:
            x0, y0 = rng.uniform(0, 0.8, 2)
            w, h = rng.uniform(0.04, 0.25, 2)
            mask = (xx >= x0) & (xx < x0 + w) & (yy >= y0) & (yy < y0 + h)
        else:
            cx, cy = rng.uniform(0.1, 0.9, 2)
            rad = rng.uniform(0.03, 0.12)
            mask = (xx - cx) ** 2 + (yy - cy) ** 2 < rad ** 2
        img[:, mask] = color[:, None]
    gx0, gy0 = rng.uniform(0.1, 0.6, 2)
    patch = (xx >= gx0) & (xx < gx0 + 0.3) & (yy >= gy0) & (yy < gy0 + 0.3)
    freq = rng.uniform(10, 18)
    grating = 0.5 + 0.35 * np.sin(2 * np.pi * freq * (xx * np.cos(0.6) + yy * np.sin(0.6)))
    tint = rng.uniform(0.6, 1.0, 3)
    img[:, patch] = (tint[:, None] * grating[patch][None])
    img = gaussian_filter(img, (0, 0.5, 0.5), mode="nearest")
    texture = gaussian_filter(rng.standard_normal((3, size, size)), (0, 0.8, 0.8), mode="wrap")
    img += 0.1 * texture / texture.std()
    return Image(np.clip(img, 0.02, 0.98))
