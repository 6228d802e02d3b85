"""Non-blind pre-deblurring from a calibrated PSF grid.

Each anchor PSF is inverted with a regularized (Wiener-style) filter; the
resulting kernel field is applied with the same spatially varying engine
used by the forward model.
"""
from __future__ import annotations

import numpy as np

from .errors import ParameterError, ShapeError
from .forward import color_average, sv_convolve
from .image import Image, KernelField, PsfGrid, as_image

LAMBDA_FLOOR = 1e-6
WINDOW_TAPER = 0.5


def fft_size(kernel_k: int) -> int:
    """Smallest power of two >= 4 * kernel_k."""
    p = 1
    while p < 4 * kernel_k:
        p *= 2
    return p


def taper_window(k_out: int, taper: float = WINDOW_TAPER) -> np.ndarray:
    """Separable raised-cosine window, flat over the inner ``1 - taper`` of the radius."""
    r = (k_out - 1) // 2
    t = np.abs(np.arange(-r, r + 1)) / (r + 1)
    edge = 1.0 - taper
    w = np.where(t <= edge, 1.0, 0.5 * (1.0 + np.cos(np.pi * (t - edge) / taper)))
    return np.outer(w, w)


def psf_spectrum(psf: np.ndarray, size: int) -> np.ndarray:
    """DFT of a centred odd kernel zero-padded to ``size`` with its centre moved to the origin."""
    k = psf.shape[0]
    buf = np.zeros((size, size))
    buf[:k, :k] = psf
    return np.fft.fft2(np.roll(buf, (-(k // 2), -(k // 2)), axis=(0, 1)))


def crop_center(kernel: np.ndarray, k_out: int) -> np.ndarray:
    """Central ``k_out`` x ``k_out`` block of an origin-centred periodic kernel."""
    p = kernel.shape[0]
    shifted = np.fft.fftshift(kernel)
    if k_out > p:
        pad = (k_out - p + 1) // 2
        shifted = np.pad(shifted, pad)
        p = shifted.shape[0]
    c, r = p // 2, (k_out - 1) // 2
    return shifted[c - r:c + r + 1, c - r:c + r + 1]


def regularization(noise_sigma: float, lambda_scale: float) -> float:
    return lambda_scale * max(noise_sigma ** 2, LAMBDA_FLOOR)


def inverse_kernel(psf: np.ndarray, lam: float, k_out: int, window: bool = True) -> np.ndarray:
    p = fft_size(psf.shape[0])
    h = psf_spectrum(psf, p)
    g = np.real(np.fft.ifft2(np.conj(h) / (np.abs(h) ** 2 + lam)))
    g = crop_center(g, k_out)
    return g * taper_window(k_out) if window else g


def predict_kernels(grid: PsfGrid, noise_sigma: float = 0.0, k_out: int = 15,
                    lambda_scale: float = 1.0) -> KernelField:
    """Per-anchor regularized inverse filters with ``lambda = lambda_scale * max(sigma^2, 1e-6)``."""
    if k_out < 1 or k_out % 2 == 0:
        raise ParameterError(f"k_out must be a positive odd integer, got {k_out}")
    if not lambda_scale > 0:
        raise ParameterError("lambda_scale must be > 0")
    if noise_sigma < 0:
        raise ParameterError("noise_sigma must be >= 0")
    lam = regularization(noise_sigma, lambda_scale)
    out = np.empty(grid.kernels.shape[:3] + (k_out, k_out))
    for idx in np.ndindex(*grid.kernels.shape[:3]):
        out[idx] = inverse_kernel(grid.kernels[idx], lam, k_out)
    return KernelField(out, grid.image_w, grid.image_h)


def apply_kernel_field(img: Image, field: KernelField, boundary: str = "replicate",
                       engine: str = "direct") -> Image:
    return sv_convolve(img, field, boundary, engine)


def predeblur_image(y: Image, grid: PsfGrid, noise_sigma: float = 0.0, k_out: int = 15,
                    lambda_scale: float = 1.0, engine: str = "direct") -> Image:
    """Coarse deblurred estimate of ``y``; no clamping."""
    return apply_kernel_field(y, predict_kernels(grid, noise_sigma, k_out, lambda_scale),
                              engine=engine)


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def dkpn_loss(tilde_y_c: Image, tilde_y_s: Image, x: Image) -> float:
    """MSE of the deblurred color cue against ``x`` plus MSE of the deblurred
    structure image against the channel average of ``x``."""
    tilde_y_c, tilde_y_s, x = as_image(tilde_y_c), as_image(tilde_y_s), as_image(x)
    if tilde_y_c.shape != x.shape:
        raise ShapeError(f"deblurred color cue {tilde_y_c.shape} does not match x {x.shape}")
    gray = color_average(x)
    if tilde_y_s.shape != gray.shape:
        raise ShapeError(f"deblurred structure {tilde_y_s.shape} does not match {gray.shape}")
    return _mse(tilde_y_c.data, x.data) + _mse(tilde_y_s.data, gray.data)


def concat_condition(deblurred: Image, original: Image) -> Image:
    """Stack channels, deblurred first."""
    deblurred, original = as_image(deblurred), as_image(original)
    if (deblurred.height, deblurred.width) != (original.height, original.width):
        raise ShapeError("cannot concatenate images of different size")
    return Image(np.concatenate([deblurred.data, original.data]))


def split_condition(cond: Image, n_deblurred: int) -> tuple[Image, Image]:
    return Image(cond.data[:n_deblurred]), Image(cond.data[n_deblurred:])
