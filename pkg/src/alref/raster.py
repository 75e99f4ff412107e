"""Core raster primitives shared by every other module.

Coordinate convention, fixed project-wide: ``(i, j)`` means (column, row),
so 2-D arrays have shape ``(width, height)`` and are indexed ``arr[i, j]``.
Multi-band data carries a leading band axis, shape ``(bands, width, height)``.

Rasters are value-semantic: operations return copies. In-place mutation
happens only through the explicit ``paste_labels`` / ``oracle.refine`` path.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

BRAS_MAGIC = b"BRAS"
KIND_MULTIBAND = 0
KIND_LABELS = 1
KIND_MASK = 2

_HEADER = struct.Struct("<4sBIII")  # magic, kind, C, W, H


class BoundsError(ValueError):
    """A region does not fit inside the raster it references."""


class BrasFormatError(ValueError):
    """Malformed or truncated BRAS payload."""


@dataclass
class MultiBandRaster:
    """Reflectance image, shape (bands, width, height), values in [0, 1]."""

    values: np.ndarray

    def __post_init__(self) -> None:
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or min(v.shape) < 1:
            raise ValueError(f"expected (bands, width, height) with all dims >= 1, got {v.shape}")
        if float(v.min()) < 0.0 or float(v.max()) > 1.0:
            raise ValueError("reflectance values must lie in [0, 1]")
        self.values = v

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def height(self) -> int:
        return self.values.shape[2]


@dataclass
class LabelRaster:
    """Per-pixel class ids, shape (width, height), ids in [0, num_classes)."""

    labels: np.ndarray
    num_classes: int = 4

    def __post_init__(self) -> None:
        lab = np.asarray(self.labels)
        if lab.ndim != 2 or min(lab.shape) < 1:
            raise ValueError(f"expected (width, height) with both dims >= 1, got {lab.shape}")
        if not np.issubdtype(lab.dtype, np.integer):
            raise ValueError("labels must be integers")
        if not 1 <= self.num_classes <= 256:
            raise ValueError("num_classes must be in [1, 256]")
        if lab.size and (int(lab.min()) < 0 or int(lab.max()) >= self.num_classes):
            raise ValueError(f"labels outside [0, {self.num_classes})")
        self.labels = lab.astype(np.uint8)

    @property
    def width(self) -> int:
        return self.labels.shape[0]

    @property
    def height(self) -> int:
        return self.labels.shape[1]

    def copy(self) -> "LabelRaster":
        return LabelRaster(self.labels.copy(), self.num_classes)


@dataclass
class AcquisitionMask:
    """Binary map, 1 = label not yet refined, 0 = refined.

    Within one experiment run entries only ever flip 1 -> 0.
    """

    bits: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.bits)
        if b.ndim != 2 or min(b.shape) < 1:
            raise ValueError(f"expected (width, height) with both dims >= 1, got {b.shape}")
        b = b.astype(np.uint8)
        if b.size and not np.all((b == 0) | (b == 1)):
            raise ValueError("mask entries must be 0 or 1")
        self.bits = b

    @classmethod
    def all_ones(cls, width: int, height: int) -> "AcquisitionMask":
        return cls(np.ones((width, height), dtype=np.uint8))

    @property
    def width(self) -> int:
        return self.bits.shape[0]

    @property
    def height(self) -> int:
        return self.bits.shape[1]


@dataclass(frozen=True)
class Region:
    """Axis-aligned window into one image of the pool."""

    image_index: int
    x0: int
    y0: int
    w: int
    h: int

    def __post_init__(self) -> None:
        if self.w < 1 or self.h < 1:
            raise ValueError("region extent must be positive")
        if self.x0 < 0 or self.y0 < 0:
            raise ValueError("region offset must be non-negative")

    def window(self) -> tuple[slice, slice]:
        return slice(self.x0, self.x0 + self.w), slice(self.y0, self.y0 + self.h)


def check_bounds(r: Region, width: int, height: int) -> None:
    """Raise BoundsError unless r fits inside a width x height raster."""
    if r.x0 + r.w > width or r.y0 + r.h > height:
        raise BoundsError(f"region {r} exceeds raster extent {width}x{height}")


def crop_labels(labels: LabelRaster, r: Region) -> LabelRaster:
    """Copy the w x h label window at r. The source is unchanged."""
    check_bounds(r, labels.width, labels.height)
    sx, sy = r.window()
    return LabelRaster(labels.labels[sx, sy].copy(), labels.num_classes)


def crop_mask(mask: AcquisitionMask, r: Region) -> AcquisitionMask:
    """Copy the w x h mask window at r. The source is unchanged."""
    check_bounds(r, mask.width, mask.height)
    sx, sy = r.window()
    return AcquisitionMask(mask.bits[sx, sy].copy())


def paste_labels(dst: LabelRaster, src: LabelRaster, r: Region) -> None:
    """Write src into dst at region r, in place."""
    check_bounds(r, dst.width, dst.height)
    if (src.width, src.height) != (r.w, r.h):
        raise ValueError(f"source {src.width}x{src.height} does not match region {r.w}x{r.h}")
    sx, sy = r.window()
    dst.labels[sx, sy] = src.labels


def class_frequencies(labels: LabelRaster) -> np.ndarray:
    """Fraction of pixels per class id, length num_classes, summing to 1."""
    counts = np.bincount(labels.labels.ravel(), minlength=labels.num_classes)
    return counts.astype(np.float64) / labels.labels.size


# ---------------------------------------------------------------------------
# BRAS file format
# ---------------------------------------------------------------------------
# magic "BRAS", u8 kind (0 = multiband f32, 1 = labels u8, 2 = mask u8),
# u32 little-endian C, W, H, then band-sequential payload (f32 LE for kind 0,
# u8 otherwise), rows varying fastest within a band.


def write_bras(path, raster: MultiBandRaster | LabelRaster | AcquisitionMask) -> None:
    if isinstance(raster, MultiBandRaster):
        kind, c = KIND_MULTIBAND, raster.bands
        payload = np.ascontiguousarray(raster.values.astype("<f4")).tobytes()
        w, h = raster.width, raster.height
    elif isinstance(raster, LabelRaster):
        kind, c = KIND_LABELS, 1
        payload = np.ascontiguousarray(raster.labels).tobytes()
        w, h = raster.width, raster.height
    elif isinstance(raster, AcquisitionMask):
        kind, c = KIND_MASK, 1
        payload = np.ascontiguousarray(raster.bits).tobytes()
        w, h = raster.width, raster.height
    else:
        raise TypeError(f"cannot serialize {type(raster).__name__}")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(BRAS_MAGIC, kind, c, w, h))
        fh.write(payload)


def read_bras(path, num_classes: int | None = None):
    """Read a BRAS file back into the matching raster type.

    Labels files do not store num_classes; pass it explicitly (e.g. from a
    dataset manifest) or it is inferred as max label + 1.
    """
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < _HEADER.size:
        raise BrasFormatError("truncated header")
    magic, kind, c, w, h = _HEADER.unpack_from(data)
    if magic != BRAS_MAGIC:
        raise BrasFormatError(f"bad magic {magic!r}")
    if c < 1 or w < 1 or h < 1:
        raise BrasFormatError("non-positive dimensions")
    itemsize = 4 if kind == KIND_MULTIBAND else 1
    expected = _HEADER.size + c * w * h * itemsize
    if len(data) != expected:
        raise BrasFormatError(f"payload is {len(data) - _HEADER.size} bytes, expected {expected - _HEADER.size}")
    body = data[_HEADER.size:]
    if kind == KIND_MULTIBAND:
        values = np.frombuffer(body, dtype="<f4").reshape(c, w, h)
        return MultiBandRaster(values.copy())
    if kind == KIND_LABELS:
        if c != 1:
            raise BrasFormatError("label rasters must have C == 1")
        labels = np.frombuffer(body, dtype=np.uint8).reshape(w, h)
        k = num_classes if num_classes is not None else int(labels.max()) + 1
        return LabelRaster(labels.copy(), k)
    if kind == KIND_MASK:
        if c != 1:
            raise BrasFormatError("masks must have C == 1")
        bits = np.frombuffer(body, dtype=np.uint8).reshape(w, h)
        return AcquisitionMask(bits.copy())
    raise BrasFormatError(f"unknown kind {kind}")
