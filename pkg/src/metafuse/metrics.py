"""Image quality metrics and the CSV report."""
from __future__ import annotations

import csv
import math

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DataError, ShapeError, SizeError
from .forward import color_average
from .image import Image, as_image

PSNR_CAP_DB = 99.0
REPORT_HEADER = ("name", "psnr_db", "ssim", "mse")

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _pair(a, b):
    a, b = as_image(a), as_image(b)
    if a.shape != b.shape:
        raise ShapeError(f"images differ in shape: {a.shape} vs {b.shape}")
    return a, b


def mse(a: Image, b: Image) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a.data - b.data) ** 2))


def psnr(a: Image, b: Image, peak: float = 1.0) -> float:
    """PSNR in dB, capped at 99 dB for (near-)identical inputs."""
    err = mse(a, b)
    if err < peak ** 2 * 10 ** (-PSNR_CAP_DB / 10):
        return PSNR_CAP_DB
    return 10.0 * math.log10(peak ** 2 / err)


def _gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    d = np.arange(size) - (size - 1) / 2
    w = np.exp(-0.5 * (d / sigma) ** 2)
    return w / w.sum()


def _filter_valid(a: np.ndarray, w: np.ndarray) -> np.ndarray:
    r = (w.size - 1) // 2
    out = correlate1d(correlate1d(a, w, axis=0), w, axis=1)
    return out[r:-r, r:-r]


def ssim(a: Image, b: Image, peak: float = 1.0) -> float:
    """Single-scale SSIM (11x11 Gaussian window, sigma 1.5) averaged over
    fully-covered window positions. Color inputs are averaged to gray first."""
    a, b = _pair(a, b)
    if a.channels == 3:
        a, b = color_average(a), color_average(b)
    elif a.channels != 1:
        raise ShapeError(f"SSIM takes 1- or 3-channel images, got {a.channels}")
    if min(a.height, a.width) < SSIM_WINDOW:
        raise SizeError(f"SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels")
    x, y = a.data[0], b.data[0]
    w = _gaussian_window()
    c1, c2 = (SSIM_K1 * peak) ** 2, (SSIM_K2 * peak) ** 2
    mx, my = _filter_valid(x, w), _filter_valid(y, w)
    vx = _filter_valid(x * x, w) - mx * mx
    vy = _filter_valid(y * y, w) - my * my
    cxy = _filter_valid(x * y, w) - mx * my
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return float(s.mean())


def evaluate(name: str, restored: Image, reference: Image) -> tuple:
    return (name, psnr(restored, reference), ssim(restored, reference), mse(restored, reference))


def report(rows, path) -> None:
    """Write ``name,psnr_db,ssim,mse`` rows with six decimals and LF endings."""
    try:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(REPORT_HEADER)
            for name, p, s, m in rows:
                w.writerow([name, f"{p:.6f}", f"{s:.6f}", f"{m:.6f}"])
    except OSError as e:
        raise DataError(f"cannot write report {path}: {e}") from e


def read_report(path) -> list[tuple[str, float, float, float]]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if tuple(header) != REPORT_HEADER:
            raise DataError(f"unexpected report header {header}")
        return [(row[0], float(row[1]), float(row[2]), float(row[3])) for row in r]
