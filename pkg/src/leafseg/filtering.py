"""Average / weighted-average smoothing and salt-and-pepper noise injection."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .image_core import RasterImage

log = logging.getLogger(__name__)

SIMPLE = "simple"
WEIGHTED = "weighted"

# Mask orders used when preparing desirable images.
SIMPLE_ORDERS = (3, 5, 7, 9, 11, 15, 35)
WEIGHTED_ORDERS = (3, 5, 7, 9, 11)

CHANNEL_MODES = ("R", "G", "B", "ALL")
_CHANNEL_INDEX = {"R": 0, "G": 1, "B": 2}


@dataclass(frozen=True, eq=False)
class FilterMask:
    kind: str
    weights: np.ndarray

    @property
    def order(self) -> int:
        return self.weights.shape[0]

    @property
    def weight_sum(self) -> int:
        return int(self.weights.sum())

    def __eq__(self, other):
        if not isinstance(other, FilterMask):
            return NotImplemented
        return self.kind == other.kind and np.array_equal(self.weights, other.weights)


@dataclass(frozen=True)
class NoiseSpec:
    density: float
    channel_mode: str = "ALL"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.density <= 1.0:
            raise ValueError(f"noise density must lie in [0, 1], got {self.density}")
        if self.channel_mode not in CHANNEL_MODES:
            raise ValueError(f"channel mode must be one of {CHANNEL_MODES}, got {self.channel_mode!r}")


def build_mask(kind: str, k: int) -> FilterMask:
    """Build a k x k averaging mask.

    ``simple`` masks are all ones. ``weighted`` masks are diamond shaped:
    each weight is ``2 ** (k - 1 - d)`` where ``d`` is the Manhattan distance
    to the center, so orthogonal neighbours outweigh diagonals and the
    center carries the largest weight.
    """
    if k < 1 or k % 2 == 0:
        raise ValueError(f"mask order must be a positive odd integer, got {k}")
    if kind == SIMPLE:
        if k not in SIMPLE_ORDERS and k != 1:
            log.warning("simple mask order %d is outside the standard grid %s", k, SIMPLE_ORDERS)
        return FilterMask(kind, np.ones((k, k), dtype=np.int64))
    if kind == WEIGHTED:
        if k not in WEIGHTED_ORDERS and k != 1:
            log.warning("weighted mask order %d is outside the standard grid %s", k, WEIGHTED_ORDERS)
        q = k // 2
        idx = np.abs(np.arange(k) - q)
        dist = idx[:, None] + idx[None, :]
        return FilterMask(kind, (2 ** (k - 1 - dist)).astype(np.int64))
    raise ValueError(f"unknown mask kind {kind!r}")


def apply_linear_filter(img: RasterImage, mask: FilterMask) -> RasterImage:
    """Weighted-mean filter over every pixel whose full window fits in the image.

    Pixels closer than ``k // 2`` to an edge are copied from the source.
    Sums are accumulated as integers and divided once, rounding half up.
    Each channel is filtered independently.
    """
    k = mask.order
    if k > min(img.width, img.height):
        raise ValueError(f"mask order {k} exceeds image size {img.width}x{img.height}")
    q = k // 2
    src = img.data.astype(np.int64)
    h, w = img.height, img.width
    ih, iw = h - 2 * q, w - 2 * q
    acc = np.zeros((ih, iw, img.channels), dtype=np.int64)
    for u in range(k):
        for v in range(k):
            acc += mask.weights[u, v] * src[u:u + ih, v:v + iw]
    total = mask.weight_sum
    out = img.data.copy()
    out[q:q + ih, q:q + iw] = ((2 * acc + total) // (2 * total)).astype(np.uint8)
    return RasterImage(out)


def inject_salt_pepper(img: RasterImage, spec: NoiseSpec) -> RasterImage:
    """Overwrite ``round(density * width * height)`` random pixels with 0 or 255.

    Positions are drawn without replacement. In ``ALL`` mode the same
    positions are hit in every channel and a corrupted pixel turns fully
    black or fully white; in ``R``/``G``/``B`` mode only that channel changes.
    """
    if spec.channel_mode != "ALL" and img.channels != 3:
        raise ValueError(f"channel mode {spec.channel_mode} requires an RGB image")
    n = int(np.floor(spec.density * img.pixel_count + 0.5))
    out = img.data.copy()
    if n == 0:
        return RasterImage(out)
    rng = np.random.default_rng(spec.seed)
    positions = rng.choice(img.pixel_count, size=n, replace=False)
    values = np.where(rng.random(n) < 0.5, 0, 255).astype(np.uint8)
    flat = out.reshape(img.pixel_count, img.channels)
    if spec.channel_mode == "ALL":
        flat[positions, :] = values[:, None]
    else:
        flat[positions, _CHANNEL_INDEX[spec.channel_mode]] = values
    return RasterImage(out)
