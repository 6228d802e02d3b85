"""Tone-map domain adaptation and gated multi-scale fusion.

Features are Gaussian pyramids. ``collapse_pyramid`` decodes a pyramid
band by band: every level contributes only the detail it holds beyond its
own reduced copy, and the coarsest level supplies the base. Applied to an
untouched pyramid this reproduces level 0.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DegenerateInputError, ParameterError, ShapeError, SizeError
from .image import Image, ToneMapParams, as_image

DEFAULT_LEVELS = 4
DEFAULT_GAMMA_GRID = (0.5, 0.75, 1.0, 1.5, 2.0, 2.2)
MIN_LEVEL_SIZE = 4

_taps = np.exp(-0.5 * np.arange(-2, 3) ** 2)
PREFILTER = _taps / _taps.sum()


@dataclass(frozen=True)
class DomainStats:
    """Per-channel first three moments of a target domain."""

    mean: tuple[float, ...]
    std: tuple[float, ...]
    skew: tuple[float, ...]

    @classmethod
    def of(cls, img: Image) -> "DomainStats":
        img = as_image(img)
        flat = img.data.reshape(img.channels, -1)
        mean = flat.mean(axis=1)
        std = flat.std(axis=1)
        return cls(tuple(mean), tuple(std), tuple(_skewness(row) for row in flat))

    def to_dict(self) -> dict:
        return {"mean": list(self.mean), "std": list(self.std), "skew": list(self.skew)}

    @classmethod
    def from_dict(cls, d: dict) -> "DomainStats":
        return cls(tuple(d["mean"]), tuple(d["std"]), tuple(d.get("skew") or [0.0] * len(d["mean"])))


def _skewness(v: np.ndarray) -> float:
    d = v - v.mean()
    s = np.sqrt(np.mean(d ** 2))
    return float(np.mean(d ** 3) / s ** 3) if s > 0 else 0.0


def fit_tone_map(src: Image, ref: DomainStats,
                 gamma_grid=DEFAULT_GAMMA_GRID) -> ToneMapParams:
    """Per channel: pick the gamma whose output skewness is closest to the
    reference, then solve gain and bias so mean and std match exactly.

    Ties go to the gamma nearest 1.
    """
    src = as_image(src)
    if len(ref.mean) != src.channels:
        raise ShapeError(f"reference stats describe {len(ref.mean)} channels, image has {src.channels}")
    grid = sorted(gamma_grid, key=lambda g: abs(np.log(g)))
    if not grid or any(g <= 0 for g in grid):
        raise ParameterError("gamma grid must hold positive values")
    gains, biases, gammas = [], [], []
    for c in range(src.channels):
        v0 = np.maximum(src.data[c].ravel(), 0.0)
        if src.data[c].std() <= 1e-8:
            raise DegenerateInputError(f"channel {c} is constant; tone map is undetermined")
        best = None
        for g in grid:
            v = v0 ** g
            sd = v.std()
            if sd <= 1e-12:
                continue
            err = abs(_skewness(v) - ref.skew[c])
            if best is None or err < best[0] - 1e-12:
                best = (err, g, v.mean(), sd)
        if best is None:
            raise DegenerateInputError(f"channel {c} has no spread after clamping")
        _, g, m, sd = best
        gain = ref.std[c] / sd
        gains.append(gain)
        biases.append(ref.mean[c] - gain * m)
        gammas.append(g)
    return ToneMapParams(tuple(gains), tuple(biases), tuple(gammas))


def apply_tone_map(img: Image, p: ToneMapParams) -> Image:
    img = as_image(img)
    if p.channels != img.channels:
        raise ShapeError(f"tone map has {p.channels} channels, image has {img.channels}")
    g = np.asarray(p.gain)[:, None, None]
    b = np.asarray(p.bias)[:, None, None]
    e = np.asarray(p.gamma)[:, None, None]
    return Image(g * np.maximum(img.data, 0.0) ** e + b)


def invert_tone_map(img: Image, p: ToneMapParams) -> Image:
    """Analytic inverse on the range of :func:`apply_tone_map`."""
    img = as_image(img)
    g = np.asarray(p.gain)[:, None, None]
    b = np.asarray(p.bias)[:, None, None]
    e = np.asarray(p.gamma)[:, None, None]
    return Image(np.maximum((img.data - b) / g, 0.0) ** (1.0 / e))


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    levels: tuple[Image, ...]

    def __post_init__(self):
        levels = tuple(as_image(l) for l in self.levels)
        if not levels:
            raise ShapeError("a pyramid needs at least one level")
        for fine, coarse in zip(levels, levels[1:]):
            if coarse.channels != fine.channels:
                raise ShapeError("pyramid levels must share a channel count")
            if (coarse.height, coarse.width) != (-(-fine.height // 2), -(-fine.width // 2)):
                raise ShapeError("each pyramid level must halve (ceiling) the previous one")
        object.__setattr__(self, "levels", levels)

    def __len__(self):
        return len(self.levels)

    def __getitem__(self, i) -> Image:
        return self.levels[i]

    @property
    def channels(self) -> int:
        return self.levels[0].channels

    def map(self, fn) -> "FeaturePyramid":
        return FeaturePyramid(tuple(fn(l) for l in self.levels))


def _reduce(a: np.ndarray) -> np.ndarray:
    """Prefilter, then average 2x2 blocks so coarse samples sit between fine
    pairs (odd edges replicate). Keeps level means aligned with level 0."""
    a = correlate1d(a, PREFILTER, axis=-1, mode="nearest")
    a = correlate1d(a, PREFILTER, axis=-2, mode="nearest")
    h, w = a.shape[-2:]
    a = np.pad(a, [(0, 0)] * (a.ndim - 2) + [(0, h % 2), (0, w % 2)], mode="edge")
    return 0.25 * (a[..., 0::2, 0::2] + a[..., 1::2, 0::2] + a[..., 0::2, 1::2] + a[..., 1::2, 1::2])


def _expand(a: np.ndarray, h: int, w: int) -> np.ndarray:
    """Bilinear upsampling; coarse pixel j sits at fine position 2j + 0.5, edges replicate."""
    def axis_map(n_fine, n_coarse):
        u = np.clip((np.arange(n_fine) - 0.5) / 2.0, 0.0, n_coarse - 1.0)
        i0 = np.floor(u).astype(np.intp)
        i1 = np.minimum(i0 + 1, n_coarse - 1)
        return i0, i1, u - i0

    y0, y1, fy = axis_map(h, a.shape[-2])
    x0, x1, fx = axis_map(w, a.shape[-1])
    rows = a[..., y0, :] * (1 - fy)[:, None] + a[..., y1, :] * fy[:, None]
    return rows[..., x0] * (1 - fx) + rows[..., x1] * fx


def build_pyramid(img: Image, levels: int = DEFAULT_LEVELS) -> FeaturePyramid:
    img = as_image(img)
    if levels < 1:
        raise ParameterError("pyramid needs at least one level")
    coarsest = min(img.height, img.width)
    for _ in range(levels - 1):
        coarsest = -(-coarsest // 2)
    if levels > 1 and coarsest < MIN_LEVEL_SIZE:
        raise SizeError(f"{img.width}x{img.height} image is too small for {levels} pyramid levels")
    out = [img]
    for _ in range(levels - 1):
        out.append(Image(_reduce(out[-1].data)))
    return FeaturePyramid(tuple(out))


def collapse_pyramid(p: FeaturePyramid) -> Image:
    recon = p[len(p) - 1].data
    for i in range(len(p) - 2, -1, -1):
        lvl = p[i].data
        h, w = lvl.shape[-2:]
        detail = lvl - _expand(_reduce(lvl), h, w)
        recon = _expand(recon, h, w) + detail
    return Image(recon)


def gated_fuse(f_z: FeaturePyramid, f_c: FeaturePyramid, f_s: FeaturePyramid) -> FeaturePyramid:
    """Per level ``f_z + f_c * f_s``; a one-channel gate broadcasts over channels."""
    if not (len(f_z) == len(f_c) == len(f_s)):
        raise ShapeError("pyramids differ in depth")
    out = []
    for z, c, s in zip(f_z.levels, f_c.levels, f_s.levels):
        if not (z.height == c.height == s.height and z.width == c.width == s.width):
            raise ShapeError("pyramid levels differ in size")
        if c.channels not in (1, z.channels) or s.channels not in (1, z.channels):
            raise ShapeError(f"cannot broadcast {c.channels}- and {s.channels}-channel features "
                             f"onto {z.channels} channels")
        out.append(Image(z.data + c.data * s.data))
    return FeaturePyramid(tuple(out))
