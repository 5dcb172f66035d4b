"""Raster container, netpbm I/O and the pixel-level conversions used by the pipeline."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Union

import numpy as np

# Luma weights in units of 1/10000 so the conversion stays in integer arithmetic.
_LUMA = (2989, 5870, 1140)

_MAGICS = {b"P2": (1, False), b"P3": (3, False), b"P5": (1, True), b"P6": (3, True)}


class PnmError(ValueError):
    """Malformed or unsupported portable pixmap/graymap data."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, eq=False)
class RasterImage:
    """8-bit raster with 1 or 3 interleaved channels.

    ``data`` has shape ``(height, width, channels)`` and dtype ``uint8``.
    """

    data: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3 or arr.shape[2] not in (1, 3):
            raise ValueError(f"expected (height, width, 1|3) array, got shape {arr.shape}")
        if arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError("image must be at least 1x1")
        if arr.dtype != np.uint8:
            if arr.size and (arr.min() < 0 or arr.max() > 255):
                raise ValueError("intensities must lie in [0, 255]")
            arr = arr.astype(np.uint8)
        arr = np.ascontiguousarray(arr)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    @property
    def pixel_count(self) -> int:
        return self.width * self.height

    def plane(self) -> np.ndarray:
        """Single-channel view as a (height, width) array."""
        if self.channels != 1:
            raise ValueError("plane() requires a single-channel image")
        return self.data[:, :, 0]

    def flatten(self) -> np.ndarray:
        """Row-major, channel-interleaved stream of samples."""
        return self.data.reshape(-1)

    def __eq__(self, other):
        if not isinstance(other, RasterImage):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self):
        return f"RasterImage({self.width}x{self.height}x{self.channels})"


@dataclass(frozen=True, eq=False)
class NormalizedPlane:
    """Real-valued image in [0, 1], shape ``(height, width, channels)``."""

    values: np.ndarray

    def __post_init__(self):
        arr = np.asarray(self.values, dtype=np.float64)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        if arr.ndim != 3:
            raise ValueError(f"expected 3-d array, got shape {arr.shape}")
        if arr.size and not (arr.min() >= 0.0 and arr.max() <= 1.0):
            raise ValueError("normalized values must lie in [0, 1]")
        object.__setattr__(self, "values", arr)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]


# -- netpbm -----------------------------------------------------------------


def _skip_space(buf: bytes, pos: int) -> int:
    n = len(buf)
    while pos < n:
        ch = buf[pos]
        if ch == 0x23:  # '#': comment to end of line
            while pos < n and buf[pos] not in (0x0A, 0x0D):
                pos += 1
        elif ch in b" \t\r\n\v\f":
            pos += 1
        else:
            break
    return pos


def _read_int(buf: bytes, pos: int, what: str) -> tuple[int, int]:
    pos = _skip_space(buf, pos)
    start = pos
    while pos < len(buf) and 0x30 <= buf[pos] <= 0x39:
        pos += 1
    if pos == start:
        if start >= len(buf):
            raise PnmError(f"truncated data while reading {what}", start)
        raise PnmError(f"expected integer for {what}", start)
    return int(buf[start:pos]), pos


def decode_image(buf: bytes) -> RasterImage:
    """Parse a P2/P3/P5/P6 image with maxval 255."""
    magic = bytes(buf[:2])
    if magic not in _MAGICS:
        raise PnmError(f"unsupported magic {magic!r}", 0)
    channels, binary = _MAGICS[magic]
    pos = 2
    width, pos = _read_int(buf, pos, "width")
    height, pos = _read_int(buf, pos, "height")
    if width < 1 or height < 1:
        raise PnmError("image dimensions must be positive", pos)
    maxval_at = _skip_space(buf, pos)
    maxval, pos = _read_int(buf, pos, "maxval")
    if maxval != 255:
        raise PnmError(f"maxval must be 255, got {maxval}", maxval_at)
    count = width * height * channels

    if binary:
        if pos >= len(buf) or buf[pos] not in b" \t\r\n\v\f":
            raise PnmError("expected single whitespace after maxval", pos)
        pos += 1
        payload = buf[pos:pos + count]
        if len(payload) < count:
            raise PnmError(f"truncated payload: expected {count} bytes, got {len(payload)}",
                           pos + len(payload))
        samples = np.frombuffer(payload, dtype=np.uint8).copy()
    else:
        samples = np.empty(count, dtype=np.uint8)
        for i in range(count):
            value, pos = _read_int(buf, pos, f"sample {i}")
            if value > 255:
                raise PnmError(f"sample {value} exceeds maxval", pos)
            samples[i] = value
    return RasterImage(samples.reshape(height, width, channels))


def encode_image(img: RasterImage, binary: bool = True) -> bytes:
    """Serialize to P5/P6 (binary) or P2/P3 (ASCII)."""
    gray = img.channels == 1
    if binary:
        magic = b"P5" if gray else b"P6"
        header = b"%s\n%d %d\n255\n" % (magic, img.width, img.height)
        return header + img.data.tobytes()
    magic = b"P2" if gray else b"P3"
    rows = [b"%s\n%d %d\n255" % (magic, img.width, img.height)]
    per_row = img.width * img.channels
    for row in img.data.reshape(img.height, per_row):
        rows.append(" ".join(map(str, row.tolist())).encode("ascii"))
    return b"\n".join(rows) + b"\n"


def read_image(path: Union[str, Path]) -> RasterImage:
    return decode_image(Path(path).read_bytes())


def write_image(img: RasterImage, path: Union[str, Path], binary: bool = True) -> int:
    payload = encode_image(img, binary=binary)
    Path(path).write_bytes(payload)
    return len(payload)


# -- conversions --------------------------------------------------------------


def to_grayscale(img: RasterImage) -> RasterImage:
    """Luma conversion 0.2989 R + 0.5870 G + 0.1140 B, rounded half-up.

    Single-channel input is returned unchanged.
    """
    if img.channels == 1:
        return img
    rgb = img.data.astype(np.int64)
    acc = _LUMA[0] * rgb[:, :, 0] + _LUMA[1] * rgb[:, :, 1] + _LUMA[2] * rgb[:, :, 2]
    gray = np.minimum((acc + 5000) // 10000, 255)
    return RasterImage(gray.astype(np.uint8))


def normalize(img: RasterImage) -> NormalizedPlane:
    return NormalizedPlane(img.data.astype(np.float64) / 255.0)


def quantize_output(y) -> int | np.ndarray:
    """Map a network output to a gray level: clamp to [0, 1], scale, round half-up.

    Accepts a scalar or an array; raises ``ValueError`` on non-finite values,
    which only appear once training has diverged.
    """
    arr = np.asarray(y, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite network output; training diverged")
    q = np.floor(np.clip(arr, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)
    if q.ndim == 0:
        return int(q)
    return q


def reconstruct(stream: Iterable, width: int, height: int, channels: int = 1) -> RasterImage:
    """Reassemble a row-major pixel stream into a ``width`` x ``height`` raster."""
    arr = np.asarray(list(stream) if not isinstance(stream, np.ndarray) else stream)
    expected = width * height * channels
    if arr.size != expected:
        raise ValueError(f"stream length mismatch: expected {expected} samples, got {arr.size}")
    return RasterImage(arr.reshape(height, width, channels))


def denormalize(plane: NormalizedPlane) -> RasterImage:
    """Quantize every value of a plane (outputs of ``predict_image``) to 8 bits."""
    return RasterImage(quantize_output(plane.values))
