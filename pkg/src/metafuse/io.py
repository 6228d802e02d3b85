"""Readers and writers for IMGF, PSFG and binary PNM files.

IMGF and PSFG are little-endian float32 containers that round-trip
bit-exactly; PNM is the interchange format for viewing.
"""
from __future__ import annotations

import os
import re
import struct

import numpy as np

from .errors import DataError, FormatError, ShapeError, SizeError
from .image import Image, PsfGrid

IMGF_MAGIC = b"IMGF"
PSFG_MAGIC = b"PSFG"
PSFG_VERSION = 1
MAX_SAMPLES = 1 << 31

_PNM_HEADER = re.compile(rb"\A(P[56])\s+(?:#[^\n]*\n\s*)*(\d+)\s+(?:#[^\n]*\n\s*)*(\d+)"
                         rb"\s+(?:#[^\n]*\n\s*)*(\d+)\s")


def srgb_to_linear(v):
    v = np.asarray(v, dtype=np.float64)
    return np.where(v <= 0.04045, v / 12.92, ((v + 0.055) / 1.055) ** 2.4)


def linear_to_srgb(v):
    v = np.clip(np.asarray(v, dtype=np.float64), 0.0, None)
    return np.where(v <= 0.0031308, 12.92 * v, 1.055 * v ** (1 / 2.4) - 0.055)


def _read(path) -> bytes:
    try:
        with open(path, "rb") as f:
            return f.read()
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}") from e


def _write(path, payload: bytes):
    try:
        with open(path, "wb") as f:
            f.write(payload)
    except OSError as e:
        raise DataError(f"cannot write {path}: {e}") from e


def _check_count(*dims) -> int:
    n = 1
    for d in dims:
        n *= int(d)
    if n <= 0 or n >= MAX_SAMPLES:
        raise SizeError(f"dimensions {dims} give an invalid sample count")
    return n


def _decode_imgf(buf: bytes) -> Image:
    if len(buf) < 16 or buf[:4] != IMGF_MAGIC:
        raise FormatError("not an IMGF file")
    w, h, c = struct.unpack("<3I", buf[4:16])
    n = _check_count(w, h, c)
    if len(buf) != 16 + 4 * n:
        raise FormatError(f"IMGF payload holds {(len(buf) - 16) // 4} floats, header declares {n}")
    data = np.frombuffer(buf, dtype="<f4", count=n, offset=16)
    return Image(data.astype(np.float64).reshape(c, h, w))


def _decode_pnm(buf: bytes) -> np.ndarray:
    m = _PNM_HEADER.match(buf)
    if m is None:
        raise FormatError("malformed PNM header (expected binary P5/P6)")
    kind, w, h, maxval = m.group(1), int(m.group(2)), int(m.group(3)), int(m.group(4))
    if maxval not in (255, 65535):
        raise FormatError(f"unsupported PNM maxval {maxval}")
    c = 1 if kind == b"P5" else 3
    n = _check_count(w, h, c)
    dtype = np.dtype("u1") if maxval == 255 else np.dtype(">u2")
    body = buf[m.end():]
    if len(body) < n * dtype.itemsize:
        raise FormatError(f"PNM body too short for {w}x{h}x{c}")
    raw = np.frombuffer(body, dtype=dtype, count=n).astype(np.float64) / maxval
    return raw.reshape(h, w, c).transpose(2, 0, 1)


def load_image(path, colorspace: str = "linear") -> Image:
    """Load an IMGF or PPM/PGM file.

    IMGF samples load verbatim. PNM samples are scaled to [0, 1] and, with
    ``colorspace="srgb"``, decoded to linear intensity.
    """
    if colorspace not in ("linear", "srgb"):
        raise ValueError(f"colorspace must be 'linear' or 'srgb', got {colorspace!r}")
    buf = _read(path)
    if buf[:4] == IMGF_MAGIC:
        return _decode_imgf(buf)
    data = _decode_pnm(buf)
    if colorspace == "srgb":
        data = srgb_to_linear(data)
    return Image(data)


def encode_imgf(img: Image) -> bytes:
    c, h, w = img.shape
    return IMGF_MAGIC + struct.pack("<3I", w, h, c) + img.data.astype("<f4").tobytes()


def save_image(img: Image, path) -> None:
    """Write ``.imgf`` verbatim (float32), anything else as 16-bit PNM clamped to [0, 1]."""
    if os.fspath(path).lower().endswith(".imgf"):
        _write(path, encode_imgf(img))
        return
    c, h, w = img.shape
    if c not in (1, 3):
        raise ShapeError(f"PNM holds 1 or 3 channels, image has {c}")
    q = np.round(np.clip(img.data, 0.0, 1.0) * 65535).astype(">u2")
    header = b"P5" if c == 1 else b"P6"
    _write(path, header + f"\n{w} {h}\n65535\n".encode() + q.transpose(1, 2, 0).tobytes())


def save_psf_grid(grid, path) -> None:
    """Write a PsfGrid (or KernelField) as PSFG."""
    head = PSFG_MAGIC + struct.pack("<7I", PSFG_VERSION, grid.grid_h, grid.grid_w, grid.kernel_k,
                                    grid.channels, grid.image_w, grid.image_h)
    _write(path, head + grid.kernels.astype("<f4").tobytes())


def load_psf_grid(path, renormalize: bool = False) -> PsfGrid:
    buf = _read(path)
    if len(buf) < 32 or buf[:4] != PSFG_MAGIC:
        raise FormatError("not a PSFG file")
    version, gh, gw, k, c, iw, ih = struct.unpack("<7I", buf[4:32])
    if version != PSFG_VERSION:
        raise FormatError(f"unsupported PSFG version {version}")
    if k % 2 == 0:
        raise FormatError(f"PSFG kernel size must be odd, got {k}")
    n = _check_count(gh, gw, c, k, k)
    if len(buf) != 32 + 4 * n:
        raise FormatError(f"PSFG payload holds {(len(buf) - 32) // 4} floats, header declares {n}")
    kernels = np.frombuffer(buf, dtype="<f4", count=n, offset=32).astype(np.float64)
    return PsfGrid(kernels.reshape(gh, gw, c, k, k), iw, ih, renormalize=renormalize)
