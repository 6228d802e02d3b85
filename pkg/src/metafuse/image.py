"""Value types shared by every stage of the toolkit.

All arrays are stored channel-first (planar) as float64 and frozen after
construction, so instances can be shared freely.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError, FormatError, ParameterError, ShapeError, TransformError

KERNEL_SUM_TOL = 1e-6
# drift beyond this is a calibration fault; below it (e.g. float32 storage) is renormalized
CALIBRATION_TOL = 1e-3


def _frozen(a, dtype=np.float64):
    a = np.array(a, dtype=dtype, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Image:
    """Planar raster of linear intensities, ``data.shape == (channels, height, width)``."""

    data: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.data)
        if a.ndim == 2:
            a = a[None]
        if a.ndim != 3 or min(a.shape) < 1:
            raise ShapeError(f"image data must be (C, H, W) with positive sizes, got {a.shape}")
        if not np.all(np.isfinite(a)):
            raise ShapeError("image samples must be finite")
        object.__setattr__(self, "data", _frozen(a))

    @property
    def channels(self) -> int:
        return self.data.shape[0]

    @property
    def height(self) -> int:
        return self.data.shape[1]

    @property
    def width(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def plane(self, c: int) -> np.ndarray:
        return self.data[c]

    def __repr__(self):
        return f"Image({self.channels}x{self.height}x{self.width})"


def as_image(x) -> Image:
    return x if isinstance(x, Image) else Image(x)


def check_same_shape(a: Image, b: Image, what: str = "images"):
    if a.shape != b.shape:
        raise ShapeError(f"{what} differ in shape: {a.shape} vs {b.shape}")


@dataclass(frozen=True, eq=False)
class KernelField:
    """Grid of anchor kernels, ``kernels.shape == (grid_h, grid_w, channels, k, k)``.

    Anchor ``(gy, gx)`` sits at the center of its cell in an
    ``image_h x image_w`` plane. Entries are unconstrained reals.
    """

    kernels: np.ndarray
    image_w: int
    image_h: int

    def __post_init__(self):
        k = np.asarray(self.kernels)
        if k.ndim != 5:
            raise FormatError(f"kernel array must be 5-D (gh, gw, c, k, k), got {k.shape}")
        gh, gw, c, kh, kw = k.shape
        if gh < 1 or gw < 1 or c < 1:
            raise FormatError("grid and channel counts must be >= 1")
        if kh != kw:
            raise FormatError(f"kernels must be square, got {kh}x{kw}")
        if kh % 2 == 0:
            raise FormatError(f"kernel size must be odd, got {kh}")
        if self.image_w < 1 or self.image_h < 1:
            raise FormatError("calibrated image size must be positive")
        if not np.all(np.isfinite(k)):
            raise FormatError("kernel entries must be finite")
        object.__setattr__(self, "kernels", _frozen(k))
        object.__setattr__(self, "image_w", int(self.image_w))
        object.__setattr__(self, "image_h", int(self.image_h))

    @property
    def grid_h(self) -> int:
        return self.kernels.shape[0]

    @property
    def grid_w(self) -> int:
        return self.kernels.shape[1]

    @property
    def channels(self) -> int:
        return self.kernels.shape[2]

    @property
    def kernel_k(self) -> int:
        return self.kernels.shape[3]

    @property
    def radius(self) -> int:
        return (self.kernel_k - 1) // 2

    def anchor_position(self, gy: int, gx: int) -> tuple[float, float]:
        """(row, col) image coordinates of an anchor."""
        return ((gy + 0.5) * self.image_h / self.grid_h - 0.5,
                (gx + 0.5) * self.image_w / self.grid_w - 0.5)

    def __repr__(self):
        return (f"{type(self).__name__}(grid={self.grid_h}x{self.grid_w}, "
                f"channels={self.channels}, k={self.kernel_k}, image={self.image_w}x{self.image_h})")


@dataclass(frozen=True, eq=False)
class PsfGrid(KernelField):
    """Anchor PSFs: non-negative kernels that each sum to one.

    Pass ``renormalize=True`` to divide each kernel by its own sum instead of
    rejecting calibrations whose sums drift.
    """

    renormalize: bool = field(default=False, repr=False)

    def __post_init__(self):
        super().__post_init__()
        k = np.array(self.kernels)
        if np.any(k < 0):
            raise CalibrationError("PSF kernels must be non-negative")
        sums = k.sum(axis=(-2, -1))
        worst = float(np.max(np.abs(sums - 1.0)))
        if worst > CALIBRATION_TOL and not self.renormalize:
            raise CalibrationError(f"PSF kernel sums deviate from 1 by up to {worst:.3g}")
        if worst > KERNEL_SUM_TOL:
            if np.any(sums <= 0):
                raise CalibrationError("cannot renormalize a kernel with zero energy")
            object.__setattr__(self, "kernels", _frozen(k / sums[..., None, None]))

    @classmethod
    def normalized(cls, kernels, image_w: int, image_h: int) -> "PsfGrid":
        return cls(kernels, image_w, image_h, renormalize=True)


@dataclass(frozen=True, eq=False)
class Transform2D:
    """Projective 3x3 matrix mapping source pixel coords ``(x, y, 1)`` to output coords."""

    m: np.ndarray
    converged: bool = True

    def __post_init__(self):
        m = np.asarray(self.m, dtype=np.float64)
        if m.shape != (3, 3) or not np.all(np.isfinite(m)):
            raise TransformError(f"transform must be a finite 3x3 matrix, got shape {m.shape}")
        if abs(m[2, 2]) < 1e-12:
            raise TransformError("transform has m[2][2] = 0 and cannot be normalized")
        m = m / m[2, 2]
        if abs(np.linalg.det(m)) <= 1e-12:
            raise TransformError("transform is singular")
        object.__setattr__(self, "m", _frozen(m))

    @classmethod
    def identity(cls) -> "Transform2D":
        return cls(np.eye(3))

    @classmethod
    def translation(cls, dx: float, dy: float) -> "Transform2D":
        return cls(np.array([[1.0, 0.0, dx], [0.0, 1.0, dy], [0.0, 0.0, 1.0]]))

    @classmethod
    def similarity(cls, angle_deg: float, scale: float, center=(0.0, 0.0),
                   shift=(0.0, 0.0)) -> "Transform2D":
        """Rotation+scale about ``center`` (x, y), followed by ``shift``."""
        a = np.deg2rad(angle_deg)
        cx, cy = center
        rs = scale * np.array([[np.cos(a), -np.sin(a)], [np.sin(a), np.cos(a)]])
        m = np.eye(3)
        m[:2, :2] = rs
        m[:2, 2] = np.array([cx, cy]) - rs @ np.array([cx, cy]) + np.asarray(shift)
        return cls(m)

    def inverse(self) -> "Transform2D":
        return Transform2D(np.linalg.inv(self.m))

    def __matmul__(self, other: "Transform2D") -> "Transform2D":
        return Transform2D(self.m @ other.m)

    def to_list(self) -> list[list[float]]:
        return self.m.tolist()


@dataclass(frozen=True)
class ToneMapParams:
    """Per-channel ``gain * max(v, 0) ** gamma + bias``."""

    gain: tuple[float, ...]
    bias: tuple[float, ...]
    gamma: tuple[float, ...]

    def __post_init__(self):
        gain, bias, gamma = (tuple(float(v) for v in np.atleast_1d(x))
                             for x in (self.gain, self.bias, self.gamma))
        if not (len(gain) == len(bias) == len(gamma)):
            raise ParameterError("tone-map parameter lists must have equal length")
        if any(g <= 0 for g in gain) or any(g <= 0 for g in gamma):
            raise ParameterError("tone-map gain and gamma must be strictly positive")
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "bias", bias)
        object.__setattr__(self, "gamma", gamma)

    @classmethod
    def identity(cls, channels: int) -> "ToneMapParams":
        return cls((1.0,) * channels, (0.0,) * channels, (1.0,) * channels)

    @property
    def channels(self) -> int:
        return len(self.gain)

    def to_dict(self) -> dict:
        return {"gain": list(self.gain), "bias": list(self.bias), "gamma": list(self.gamma)}


@dataclass(frozen=True)
class NoiseModel:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ParameterError(f"noise sigma must be >= 0, got {self.sigma}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("noise seed must fit in 64 unsigned bits")
