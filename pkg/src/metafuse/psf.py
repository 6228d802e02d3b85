"""Synthetic PSF-grid generators.

Blur grows with field radius from the image centre, standing in for
measured metalens calibrations. All kernels are normalized.
"""
from __future__ import annotations

import numpy as np

from .errors import ParameterError
from .image import PsfGrid

KINDS = ("gaussian-ramp", "astigmatic-ramp", "delta")


def anchor_radii(grid_h: int, grid_w: int, image_w: int, image_h: int):
    """Normalized field radius (0 at centre, 1 at the corner) and polar angle per anchor."""
    gy, gx = np.mgrid[0:grid_h, 0:grid_w].astype(np.float64)
    ay = (gy + 0.5) * image_h / grid_h - 0.5
    ax = (gx + 0.5) * image_w / grid_w - 0.5
    cy, cx = (image_h - 1) / 2.0, (image_w - 1) / 2.0
    half_diag = max(np.hypot(cy, cx), 1e-12)
    dy, dx = ay - cy, ax - cx
    return np.hypot(dy, dx) / half_diag, np.arctan2(dy, dx)


def gaussian_kernel(k: int, sigma_major: float, sigma_minor: float | None = None,
                    angle: float = 0.0) -> np.ndarray:
    """Sampled, normalized (possibly anisotropic) Gaussian; ``angle`` orients the major axis."""
    r = k // 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    if sigma_minor is None:
        sigma_minor = sigma_major
    if sigma_major <= 0 or sigma_minor <= 0:
        g = np.zeros((k, k))
        g[r, r] = 1.0
        return g
    u = np.cos(angle) * x + np.sin(angle) * y
    v = -np.sin(angle) * x + np.cos(angle) * y
    g = np.exp(-0.5 * ((u / sigma_major) ** 2 + (v / sigma_minor) ** 2))
    return g / g.sum()


def kernel_moments(kernel: np.ndarray) -> np.ndarray:
    """2x2 second-moment (covariance) matrix of a kernel about its centroid."""
    r = kernel.shape[0] // 2
    y, x = np.mgrid[-r:r + 1, -r:r + 1].astype(np.float64)
    w = kernel / kernel.sum()
    mx, my = (w * x).sum(), (w * y).sum()
    cxx = (w * (x - mx) ** 2).sum()
    cyy = (w * (y - my) ** 2).sum()
    cxy = (w * (x - mx) * (y - my)).sum()
    return np.array([[cxx, cxy], [cxy, cyy]])


def anisotropy_ratio(kernel: np.ndarray) -> float:
    ev = np.linalg.eigvalsh(kernel_moments(kernel))
    return float(np.sqrt(ev[-1] / ev[0]))


def make_psf_grid(kind: str, grid_h: int = 5, grid_w: int = 5, kernel_k: int = 11,
                  image_w: int = 128, image_h: int = 128, sigma_center: float = 0.5,
                  sigma_edge: float = 1.5, astigmatism: float = 1.0, channels: int = 1,
                  chromatic=None) -> PsfGrid:
    """Build a synthetic calibration.

    ``gaussian-ramp``: isotropic sigma rising linearly with field radius.
    ``astigmatic-ramp``: radial sigma as above, tangential sigma stretched by
    ``1 + astigmatism * radius``.
    ``delta``: identity kernels.
    ``chromatic`` scales sigma per channel when ``channels == 3``.
    """
    if kind not in KINDS:
        raise ParameterError(f"PSF kind must be one of {KINDS}, got {kind!r}")
    if kernel_k < 1 or kernel_k % 2 == 0:
        raise ParameterError(f"kernel_k must be odd and positive, got {kernel_k}")
    if min(grid_h, grid_w, image_w, image_h) < 1:
        raise ParameterError("grid and image sizes must be positive")
    if channels not in (1, 3):
        raise ParameterError("channels must be 1 or 3")
    if sigma_center < 0 or sigma_edge < 0 or astigmatism < 0:
        raise ParameterError("sigmas and astigmatism must be non-negative")
    scales = np.ones(channels) if chromatic is None else np.asarray(chromatic, dtype=np.float64)
    if scales.shape != (channels,) or np.any(scales <= 0):
        raise ParameterError(f"chromatic scales must be {channels} positive values")

    radius, theta = anchor_radii(grid_h, grid_w, image_w, image_h)
    kernels = np.zeros((grid_h, grid_w, channels, kernel_k, kernel_k))
    for gy in range(grid_h):
        for gx in range(grid_w):
            rho = radius[gy, gx]
            sigma = sigma_center + (sigma_edge - sigma_center) * rho
            for c in range(channels):
                s = sigma * scales[c]
                if kind == "delta":
                    kern = gaussian_kernel(kernel_k, 0.0)
                elif kind == "gaussian-ramp":
                    kern = gaussian_kernel(kernel_k, s)
                else:
                    tangential = theta[gy, gx] + np.pi / 2
                    kern = gaussian_kernel(kernel_k, s * (1.0 + astigmatism * rho), s, tangential)
                kernels[gy, gx, c] = kern
    return PsfGrid(kernels, image_w, image_h)
