"""Parametric frame alignment.

``estimate_transform`` runs coarse-to-fine inverse-compositional
Lucas-Kanade on luminance; ``warp`` resamples an image under a projective
transform by bilinear inverse mapping.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ParameterError, ShapeError, TransformError
from .forward import _check_boundary, color_average
from .image import Image, Transform2D, as_image, check_same_shape

logger = logging.getLogger(__name__)

MODELS = ("translation", "affine", "homography")
_NPARAMS = {"translation": 2, "affine": 6, "homography": 8}


@dataclass(frozen=True)
class AlignConfig:
    model: str = "affine"
    pyramid_levels: int = 3
    max_iters: int = 50
    convergence_tol: float = 1e-6

    def __post_init__(self):
        if self.model not in MODELS:
            raise ParameterError(f"alignment model must be one of {MODELS}, got {self.model!r}")
        if self.pyramid_levels < 1:
            raise ParameterError("pyramid_levels must be >= 1")
        if self.max_iters < 1:
            raise ParameterError("max_iters must be >= 1")
        if not self.convergence_tol > 0:
            raise ParameterError("convergence_tol must be > 0")


def bilinear_sample(plane: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``plane`` at real coordinates, clamping to the border (replicate)."""
    h, w = plane.shape
    xs = np.clip(xs, 0.0, w - 1.0)
    ys = np.clip(ys, 0.0, h - 1.0)
    x0 = np.minimum(np.floor(xs).astype(np.intp), max(w - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(np.intp), max(h - 2, 0))
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = xs - x0
    fy = ys - y0
    top = (1.0 - fx) * plane[y0, x0] + fx * plane[y0, x1]
    bot = (1.0 - fx) * plane[y1, x0] + fx * plane[y1, x1]
    return (1.0 - fy) * top + fy * bot


def _map_points(m: np.ndarray, xs: np.ndarray, ys: np.ndarray):
    d = m[2, 0] * xs + m[2, 1] * ys + m[2, 2]
    return ((m[0, 0] * xs + m[0, 1] * ys + m[0, 2]) / d,
            (m[1, 0] * xs + m[1, 1] * ys + m[1, 2]) / d)


def warp(img: Image, H: Transform2D, boundary: str = "replicate") -> Image:
    """Resample so that ``out(x, y) = img(H^-1 (x, y, 1))`` (bilinear, replicate border)."""
    img = as_image(img)
    _check_boundary(boundary)
    if abs(np.linalg.det(H.m)) <= 1e-12:
        raise TransformError("cannot warp by a singular transform")
    inv = np.linalg.inv(H.m)
    ys, xs = np.mgrid[0:img.height, 0:img.width].astype(np.float64)
    sx, sy = _map_points(inv, xs, ys)
    return Image(np.stack([bilinear_sample(p, sx, sy) for p in img.data]))


def _param_matrix(model: str, p: np.ndarray) -> np.ndarray:
    m = np.eye(3)
    if model == "translation":
        m[0, 2], m[1, 2] = p
    else:
        m[:2, :] += p[:6].reshape(2, 3)
        if model == "homography":
            m[2, :2] = p[6:8]
    return m


def _jacobian(model: str, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """d(warped x, warped y)/dp at p = 0, shape (2, n, nparams)."""
    n = xs.size
    one, zero = np.ones(n), np.zeros(n)
    if model == "translation":
        jx = [one, zero]
        jy = [zero, one]
    else:
        jx = [xs, ys, one, zero, zero, zero]
        jy = [zero, zero, zero, xs, ys, one]
        if model == "homography":
            jx += [-xs * xs, -xs * ys]
            jy += [-xs * ys, -ys * ys]
    return np.stack([np.stack(jx, axis=-1), np.stack(jy, axis=-1)])


def gaussian_pyramid(plane: np.ndarray, levels: int) -> list[np.ndarray]:
    """Downsample by 2 after a sigma=1 Gaussian prefilter; level i+1 pixel j sits at level i pixel 2j."""
    out = [plane]
    for _ in range(levels - 1):
        out.append(gaussian_filter(out[-1], 1.0, mode="nearest")[::2, ::2])
    return out


def _normalizer(h: int, w: int) -> np.ndarray:
    s = max(h, w) / 2.0
    return np.array([[1 / s, 0, -(w - 1) / (2 * s)], [0, 1 / s, -(h - 1) / (2 * s)], [0, 0, 1]])


def _lk_level(moving, fixed, g_pix, model, max_iters, tol):
    """Refine ``g_pix`` (fixed pixel -> moving pixel) on one pyramid level."""
    h, w = fixed.shape
    norm = _normalizer(h, w)
    norm_inv = np.linalg.inv(norm)
    g = norm @ g_pix @ norm_inv

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    interior = np.zeros((h, w), dtype=bool)
    interior[1:-1, 1:-1] = True
    gy, gx = np.gradient(fixed)
    s = 1.0 / norm[0, 0]
    xn, yn = _map_points(norm, xs.ravel(), ys.ravel())
    jac = _jacobian(model, xn, yn)
    sd = (gx.ravel() * s)[:, None] * jac[0] + (gy.ravel() * s)[:, None] * jac[1]
    tmpl = fixed.ravel()

    best = (np.inf, g.copy())
    converged = False
    for _ in range(max_iters):
        g_cur = norm_inv @ g @ norm
        wx, wy = _map_points(g_cur, xs, ys)
        valid = (interior & (wx >= 0) & (wx <= w - 1) & (wy >= 0) & (wy <= h - 1)).ravel()
        if valid.sum() < 4 * sd.shape[1]:
            break
        err = bilinear_sample(moving, wx, wy).ravel() - tmpl
        mse = float(np.mean(err[valid] ** 2))
        if mse < best[0]:
            best = (mse, g.copy())
        sdv = sd[valid]
        hess = sdv.T @ sdv
        try:
            dp = np.linalg.solve(hess, sdv.T @ err[valid])
        except np.linalg.LinAlgError:
            break
        g = g @ np.linalg.inv(_param_matrix(model, dp))
        g = g / g[2, 2]
        if np.linalg.norm(dp) < tol:
            converged = True
            best = (0.0, g.copy())
            break
    if not converged:
        # the final update was never scored
        wx, wy = _map_points(norm_inv @ g @ norm, xs, ys)
        valid = (interior & (wx >= 0) & (wx <= w - 1) & (wy >= 0) & (wy <= h - 1)).ravel()
        if valid.any():
            err = bilinear_sample(moving, wx, wy).ravel()[valid] - tmpl[valid]
            if float(np.mean(err ** 2)) < best[0]:
                best = (0.0, g)
    return norm_inv @ best[1] @ norm, converged


def _luminance(img: Image) -> np.ndarray:
    if img.channels == 3:
        return color_average(img).data[0]
    if img.channels == 1:
        return img.data[0]
    raise ShapeError(f"alignment needs 1- or 3-channel images, got {img.channels}")


def estimate_transform(moving: Image, fixed: Image, cfg: AlignConfig = AlignConfig()) -> Transform2D:
    """Estimate ``H`` such that ``warp(moving, H)`` matches ``fixed``.

    Non-convergence on the finest level is reported through
    ``Transform2D.converged`` rather than raised.
    """
    moving, fixed = as_image(moving), as_image(fixed)
    if (moving.height, moving.width) != (fixed.height, fixed.width):
        raise ShapeError("alignment inputs must have equal dimensions")
    pm = gaussian_pyramid(_luminance(moving), cfg.pyramid_levels)
    pf = gaussian_pyramid(_luminance(fixed), cfg.pyramid_levels)
    g = np.eye(3)
    converged = False
    for level in reversed(range(cfg.pyramid_levels)):
        if min(pf[level].shape) < 8:
            continue
        scale = np.diag([2.0 ** -level, 2.0 ** -level, 1.0])
        g_lvl = scale @ g @ np.linalg.inv(scale)
        g_lvl, converged = _lk_level(pm[level], pf[level], g_lvl, cfg.model,
                                     cfg.max_iters, cfg.convergence_tol)
        g = np.linalg.inv(scale) @ g_lvl @ scale
    if not converged:
        logger.warning("alignment did not converge; returning best iterate")
    return Transform2D(np.linalg.inv(g), converged=converged)


def align_color_to_structure(y_c: Image, y_s: Image,
                             cfg: AlignConfig = AlignConfig()) -> tuple[Image, Transform2D]:
    """Warp all color-cue channels by one transform estimated on luminance."""
    y_c, y_s = as_image(y_c), as_image(y_s)
    if y_c.channels != 3 or y_s.channels != 1:
        raise ShapeError("expected a 3-channel color cue and a 1-channel structure image")
    if (y_c.height, y_c.width) != (y_s.height, y_s.width):
        raise ShapeError("color cue and structure image differ in size")
    H = estimate_transform(color_average(y_c), y_s, cfg)
    return warp(y_c, H), H
