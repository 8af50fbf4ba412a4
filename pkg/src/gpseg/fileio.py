"""Bit-exact binary formats for feature maps and masks.

FMAP: magic ``FMAP``, u32 LE version (=1), u32 LE h, w, d, stride,
dtype code (0 = 32-bit LE reals, 1 = 64-bit LE reals), then h*w*d values
row-major over (row, col) with channels contiguous per cell.

MSK0: magic ``MSK0``, u32 LE version (=1), u32 LE h, w, then h*w bytes,
each 0 or 1.

Readers reject trailing bytes so every file is self-delimiting.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    DimensionMismatch,
    NonBinaryData,
    NonFiniteData,
    TrailingData,
    TruncatedFile,
    UnsupportedVersion,
)

FMAP_MAGIC = b"FMAP"
MASK_MAGIC = b"MSK0"
FORMAT_VERSION = 1

DTYPE_F32 = 0
DTYPE_F64 = 1
_DTYPES = {DTYPE_F32: np.dtype("<f4"), DTYPE_F64: np.dtype("<f8")}


@dataclass(frozen=True)
class FeatureMap:
    """Spatial grid of D-dimensional features with stride metadata.

    ``data`` has one row per cell, row-major over (row, col). ``dtype_code``
    records the on-disk precision so read/write round-trips are byte-exact;
    in memory everything is 64-bit.
    """

    h: int
    w: int
    d: int
    stride: int
    data: np.ndarray
    dtype_code: int = DTYPE_F64

    def __post_init__(self):
        if self.h < 1 or self.w < 1 or self.d < 1:
            raise DimensionMismatch(f"bad grid {self.h}x{self.w}x{self.d}")
        if self.stride < 1:
            raise DimensionMismatch(f"stride must be positive, got {self.stride}")
        if self.dtype_code not in _DTYPES:
            raise UnsupportedVersion(f"unknown dtype code {self.dtype_code}")
        if self.data.shape != (self.h * self.w, self.d):
            raise DimensionMismatch(
                f"data shape {self.data.shape} != ({self.h * self.w}, {self.d})"
            )
        if not np.isfinite(self.data).all():
            raise NonFiniteData("feature map contains NaN or infinite values")


@dataclass(frozen=True)
class MaskMap:
    """Binary spatial grid; values are exactly 0 or 1."""

    h: int
    w: int
    data: np.ndarray

    def __post_init__(self):
        if self.data.shape != (self.h, self.w):
            raise DimensionMismatch(
                f"mask shape {self.data.shape} != ({self.h}, {self.w})"
            )
        if self.data.dtype != np.uint8:
            object.__setattr__(self, "data", self.data.astype(np.uint8))
        if not np.isin(self.data, (0, 1)).all():
            raise NonBinaryData("mask values must be exactly 0 or 1")


@dataclass(frozen=True)
class EncodedMask:
    """Mask encoding on a feature-resolution grid; one row per cell."""

    h: int
    w: int
    e: int
    data: np.ndarray = field(repr=False)

    def __post_init__(self):
        if self.data.shape != (self.h * self.w, self.e):
            raise DimensionMismatch(
                f"encoding shape {self.data.shape} != ({self.h * self.w}, {self.e})"
            )


def _read_exact(buf: bytes, offset: int, n: int, what: str) -> bytes:
    if offset + n > len(buf):
        raise TruncatedFile(f"file ends inside {what}")
    return buf[offset : offset + n]


def fmap_write(path, fm: FeatureMap) -> None:
    """Write a feature map; lossless round-trip against ``fmap_read``."""
    with np.errstate(over="ignore"):
        payload = fm.data.astype(_DTYPES[fm.dtype_code])
    if not np.isfinite(payload).all():
        raise NonFiniteData("values overflow the declared on-disk precision")
    header = FMAP_MAGIC + struct.pack(
        "<6I", FORMAT_VERSION, fm.h, fm.w, fm.d, fm.stride, fm.dtype_code
    )
    Path(path).write_bytes(header + payload.tobytes())


def fmap_read(path) -> FeatureMap:
    """Read a feature map written by ``fmap_write``."""
    buf = Path(path).read_bytes()
    magic = _read_exact(buf, 0, 4, "magic")
    if magic != FMAP_MAGIC:
        raise BadMagic(f"expected {FMAP_MAGIC!r}, got {magic!r}")
    version, h, w, d, stride, code = struct.unpack(
        "<6I", _read_exact(buf, 4, 24, "header")
    )
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"version {version} not supported")
    if code not in _DTYPES:
        raise UnsupportedVersion(f"dtype code {code} not supported")
    dtype = _DTYPES[code]
    nbytes = h * w * d * dtype.itemsize
    raw = _read_exact(buf, 28, nbytes, "payload")
    if len(buf) != 28 + nbytes:
        raise TrailingData(f"{len(buf) - 28 - nbytes} bytes past the payload")
    data = np.frombuffer(raw, dtype=dtype).astype(np.float64).reshape(h * w, d)
    return FeatureMap(h=h, w=w, d=d, stride=stride, data=data, dtype_code=code)


def mask_write(path, mask: MaskMap) -> None:
    """Write a binary mask; lossless round-trip against ``mask_read``."""
    header = MASK_MAGIC + struct.pack("<3I", FORMAT_VERSION, mask.h, mask.w)
    Path(path).write_bytes(header + mask.data.tobytes())


def mask_read(path) -> MaskMap:
    """Read a mask written by ``mask_write``."""
    buf = Path(path).read_bytes()
    magic = _read_exact(buf, 0, 4, "magic")
    if magic != MASK_MAGIC:
        raise BadMagic(f"expected {MASK_MAGIC!r}, got {magic!r}")
    version, h, w = struct.unpack("<3I", _read_exact(buf, 4, 12, "header"))
    if version != FORMAT_VERSION:
        raise UnsupportedVersion(f"version {version} not supported")
    raw = _read_exact(buf, 16, h * w, "payload")
    if len(buf) != 16 + h * w:
        raise TrailingData(f"{len(buf) - 16 - h * w} bytes past the payload")
    data = np.frombuffer(raw, dtype=np.uint8).reshape(h, w)
    if not np.isin(data, (0, 1)).all():
        raise NonBinaryData("mask payload contains bytes other than 0 and 1")
    return MaskMap(h=h, w=w, data=data.copy())
