"""Measurement model: spatially varying blur, its adjoint, color averaging, noise.

The blur at pixel (y, x) is the bilinear interpolation of the (at most four)
surrounding anchor kernels. Because the interpolation weights do not depend
on the kernel tap, the same result can be computed by convolving the whole
image with every anchor kernel and blending the outputs with the weights;
that is the ``tiled`` engine. The ``direct`` engine evaluates the per-pixel
interpolated kernel tap by tap and serves as the reference.
"""
from __future__ import annotations

import numpy as np
from scipy.signal import fftconvolve

from .errors import ShapeError
from .image import Image, KernelField, NoiseModel, PsfGrid, as_image

BOUNDARY_MODES = ("replicate",)
ENGINES = ("direct", "tiled")
LUMINANCE_WEIGHTS = (0.2126, 0.7152, 0.0722)


def _check_boundary(boundary: str):
    if boundary not in BOUNDARY_MODES:
        raise ValueError(f"unsupported boundary mode {boundary!r}")


def axis_weights(n: int, g: int) -> np.ndarray:
    """Interpolation weights of ``g`` cell-centred anchors along an axis of ``n`` pixels.

    Returns a (g, n) array whose columns sum to one; pixels outside the
    outermost anchors take the border anchor (clamped).
    """
    w = np.zeros((g, n))
    if g == 1:
        w[0] = 1.0
        return w
    u = np.clip((np.arange(n) + 0.5) * g / n - 0.5, 0.0, g - 1.0)
    i0 = np.minimum(np.floor(u).astype(int), g - 2)
    frac = u - i0
    cols = np.arange(n)
    w[i0, cols] = 1.0 - frac
    w[i0 + 1, cols] += frac
    return w


def anchor_weights(field: KernelField) -> tuple[np.ndarray, np.ndarray]:
    """Separable weights: anchor (gy, gx) weighs pixel (y, x) by ``wy[gy, y] * wx[gx, x]``."""
    return axis_weights(field.image_h, field.grid_h), axis_weights(field.image_w, field.grid_w)


def interpolated_kernel(field: KernelField, y: int, x: int, c: int = 0) -> np.ndarray:
    """The kernel in effect at a single pixel."""
    wy, wx = anchor_weights(field)
    cc = c if field.channels > 1 else 0
    return np.einsum("a,b,abij->ij", wy[:, y], wx[:, x], field.kernels[:, :, cc])


def _check_compat(img: Image, field: KernelField):
    if (img.width, img.height) != (field.image_w, field.image_h):
        raise ShapeError(f"image is {img.width}x{img.height} but kernel grid calibrates "
                         f"{field.image_w}x{field.image_h}")
    if field.channels not in (1, img.channels):
        raise ShapeError(f"kernel grid has {field.channels} channels, image has {img.channels}")


def _fold_replicate(acc: np.ndarray, r: int) -> np.ndarray:
    """Adjoint of edge padding by ``r``: add the padded margins back onto the border."""
    if r == 0:
        return acc
    acc = acc.copy()
    acc[r] += acc[:r].sum(axis=0)
    acc[-r - 1] += acc[-r:].sum(axis=0)
    acc = acc[r:-r]
    acc[:, r] += acc[:, :r].sum(axis=1)
    acc[:, -r - 1] += acc[:, -r:].sum(axis=1)
    return acc[:, r:-r]


def _direct_forward(plane, kern, wy, wx, r):
    h, w = plane.shape
    pad = np.pad(plane, r, mode="edge")
    out = np.zeros_like(plane)
    k = 2 * r + 1
    for dy in range(k):
        for dx in range(k):
            tap = wy.T @ kern[:, :, dy, dx] @ wx
            out += tap * pad[2 * r - dy:2 * r - dy + h, 2 * r - dx:2 * r - dx + w]
    return out


def _direct_adjoint(plane, kern, wy, wx, r):
    h, w = plane.shape
    acc = np.zeros((h + 2 * r, w + 2 * r))
    k = 2 * r + 1
    for dy in range(k):
        for dx in range(k):
            tap = wy.T @ kern[:, :, dy, dx] @ wx
            acc[2 * r - dy:2 * r - dy + h, 2 * r - dx:2 * r - dx + w] += tap * plane
    return _fold_replicate(acc, r)


def _tiled_forward(plane, kern, wy, wx, r):
    pad = np.pad(plane, r, mode="edge")
    out = np.zeros_like(plane)
    for gy in range(kern.shape[0]):
        for gx in range(kern.shape[1]):
            weight = np.outer(wy[gy], wx[gx])
            if not weight.any():
                continue
            out += weight * fftconvolve(pad, kern[gy, gx], mode="valid")
    return out


def _tiled_adjoint(plane, kern, wy, wx, r):
    h, w = plane.shape
    acc = np.zeros((h + 2 * r, w + 2 * r))
    for gy in range(kern.shape[0]):
        for gx in range(kern.shape[1]):
            weight = np.outer(wy[gy], wx[gx])
            if not weight.any():
                continue
            acc += fftconvolve(weight * plane, kern[gy, gx, ::-1, ::-1], mode="full")
    return _fold_replicate(acc, r)


_KERNELS = {
    ("direct", False): _direct_forward,
    ("direct", True): _direct_adjoint,
    ("tiled", False): _tiled_forward,
    ("tiled", True): _tiled_adjoint,
}


def _apply(img, field, boundary, engine, adjoint):
    img = as_image(img)
    _check_boundary(boundary)
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}, got {engine!r}")
    _check_compat(img, field)
    wy, wx = anchor_weights(field)
    fn = _KERNELS[engine, adjoint]
    planes = []
    for c in range(img.channels):
        kern = field.kernels[:, :, c if field.channels > 1 else 0]
        planes.append(fn(img.data[c], kern, wy, wx, field.radius))
    return Image(np.stack(planes))


def sv_convolve(img: Image, field: KernelField, boundary: str = "replicate",
                engine: str = "direct") -> Image:
    """Spatially varying convolution with replicate boundary.

    ``out[y, x] = sum_{dy, dx} k_yx[dy, dx] * img[y - dy + r, x - dx + r]`` where
    ``k_yx`` is bilinearly interpolated from the anchor kernels. A one-channel
    grid is shared by every image channel.
    """
    return _apply(img, field, boundary, engine, adjoint=False)


def sv_adjoint(img: Image, field: KernelField, boundary: str = "replicate",
               engine: str = "direct") -> Image:
    """Exact transpose of :func:`sv_convolve` (padding folded back onto the border)."""
    return _apply(img, field, boundary, engine, adjoint=True)


def color_average(img: Image, weights=None) -> Image:
    """Collapse three channels to one; uniform 1/3 weights unless ``weights`` given."""
    img = as_image(img)
    if img.channels != 3:
        raise ShapeError(f"color averaging needs 3 channels, got {img.channels}")
    if weights is None:
        return Image(img.data.sum(axis=0, keepdims=True) / 3.0)
    w = np.asarray(weights, dtype=np.float64)
    if w.shape != (3,):
        raise ShapeError("color weights must have length 3")
    return Image(np.tensordot(w, img.data, axes=1)[None])


def replicate_channels(img: Image, channels: int = 3) -> Image:
    img = as_image(img)
    if img.channels != 1:
        raise ShapeError("can only replicate a single-channel image")
    return Image(np.repeat(img.data, channels, axis=0))


def add_gaussian_noise(img: Image, noise: NoiseModel) -> Image:
    """``img + sigma * eps`` with eps drawn from a generator seeded by ``noise.seed``."""
    img = as_image(img)
    if noise.sigma == 0:
        return img
    rng = np.random.default_rng(int(noise.seed))
    return Image(img.data + noise.sigma * rng.standard_normal(img.shape))


def child_seeds(seed: int, n: int) -> list[int]:
    """Independent 64-bit seeds derived from one parent seed."""
    return [int(s.generate_state(1, np.uint64)[0]) for s in np.random.SeedSequence(int(seed)).spawn(n)]


def synthesize_measurements(x: Image, grid_c: PsfGrid, grid_s: PsfGrid, noise: NoiseModel,
                            engine: str = "direct", luminance: bool = False) -> tuple[Image, Image]:
    """Simulate the blurred color cue and the monochrome structure image.

    Measurements are left unclamped. The two noise draws are independent
    streams derived from ``noise.seed``.
    """
    x = as_image(x)
    if x.channels != 3:
        raise ShapeError(f"scene must have 3 channels, got {x.channels}")
    if grid_s.channels != 1:
        raise ShapeError(f"structure PSF grid must have 1 channel, got {grid_s.channels}")
    seed_c, seed_s = child_seeds(noise.seed, 2)
    y_c = sv_convolve(x, grid_c, engine=engine)
    gray = color_average(x, LUMINANCE_WEIGHTS if luminance else None)
    y_s = sv_convolve(gray, grid_s, engine=engine)
    return (add_gaussian_noise(y_c, NoiseModel(noise.sigma, seed_c)),
            add_gaussian_noise(y_s, NoiseModel(noise.sigma, seed_s)))
