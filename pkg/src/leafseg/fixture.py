"""Synthetic leaf photograph used by tests, examples and the acceptance suite.

A dark backdrop, an elliptical green leaf and a handful of yellowed blotches,
each tone jittered per pixel. Deterministic for a given seed.
"""
from __future__ import annotations

import numpy as np

from .image_core import RasterImage

WIDTH, HEIGHT = 320, 240

BACKDROP = (28, 34, 30)
LEAF = (52, 176, 44)
BLOTCH = (226, 208, 58)
JITTER = 8

# (cx, cy, radius) of the yellowed areas, all inside the leaf
BLOTCHES = ((120, 100, 16), (185, 140, 13), (215, 95, 11), (150, 165, 12))


def leaf_regions(width: int = WIDTH, height: int = HEIGHT) -> tuple[np.ndarray, np.ndarray]:
    """Boolean (leaf, blotch) masks of the fixture geometry."""
    yy, xx = np.mgrid[0:height, 0:width]
    sx, sy = width / WIDTH, height / HEIGHT
    leaf = ((xx - 160 * sx) / (130 * sx)) ** 2 + ((yy - 120 * sy) / (95 * sy)) ** 2 <= 1.0
    blotch = np.zeros_like(leaf)
    for cx, cy, r in BLOTCHES:
        blotch |= (xx - cx * sx) ** 2 + (yy - cy * sy) ** 2 <= (r * min(sx, sy)) ** 2
    return leaf, blotch & leaf


def make_leaf_fixture(seed: int = 7, width: int = WIDTH, height: int = HEIGHT,
                      jitter: int = JITTER) -> RasterImage:
    leaf, blotch = leaf_regions(width, height)
    base = np.empty((height, width, 3), dtype=np.int64)
    base[:] = BACKDROP
    base[leaf] = LEAF
    base[blotch] = BLOTCH
    rng = np.random.default_rng(seed)
    noise = rng.integers(-jitter, jitter + 1, size=base.shape)
    return RasterImage(np.clip(base + noise, 1, 254).astype(np.uint8))
