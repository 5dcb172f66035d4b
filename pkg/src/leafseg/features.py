"""Per-pixel network inputs."""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .image_core import RasterImage, to_grayscale
from .segmentation import histogram


class FeatureVariant(Enum):
    RGB3 = ("RGB3", 3)
    RGB_HIST4 = ("RGB_HIST4", 4)
    ISP_GRAY3 = ("ISP_GRAY3", 3)
    HIST_GRAY2 = ("HIST_GRAY2", 2)
    GRAY1 = ("GRAY1", 1)

    def __init__(self, tag: str, arity: int):
        self.tag = tag
        self.arity = arity

    @classmethod
    def from_tag(cls, tag: str) -> "FeatureVariant":
        for v in cls:
            if v.tag == tag:
                return v
        raise ValueError(f"unknown feature variant {tag!r}; expected one of {[v.tag for v in cls]}")


# Input variants compared against each other in the third experiment.
STAGE3_VARIANTS = (FeatureVariant.RGB_HIST4, FeatureVariant.ISP_GRAY3,
                   FeatureVariant.HIST_GRAY2, FeatureVariant.GRAY1)


@dataclass(frozen=True, eq=False)
class SideTables:
    """Gray-level statistics: normalized histogram, cumulative probability and
    max-normalized two-class between-class variance, each indexed by gray level."""

    hist: np.ndarray
    cumulative: np.ndarray
    between_var: np.ndarray
    degenerate: bool


@dataclass(frozen=True, eq=False)
class PixelFeatureSet:
    variant: FeatureVariant
    vectors: np.ndarray  # (pixels, arity)
    tables: SideTables | None
    width: int
    height: int

    def __len__(self):
        return self.vectors.shape[0]


def build_side_tables(plane: RasterImage) -> SideTables:
    hist = histogram(plane)
    total = hist.total
    h = hist.counts / total
    p1 = np.cumsum(h)
    levels = np.arange(256, dtype=np.float64)
    mu = np.cumsum(levels * h)
    mu_t = mu[-1]
    denom = p1 * (1.0 - p1)
    with np.errstate(divide="ignore", invalid="ignore"):
        var = np.where(denom > 1e-15, (mu_t * p1 - mu) ** 2 / np.where(denom > 1e-15, denom, 1.0), 0.0)
    # t = 255 puts every pixel in one class
    var[255] = 0.0
    peak = var.max()
    degenerate = hist.nonzero_bins < 2 or peak <= 0.0
    if degenerate:
        var = np.zeros(256)
    else:
        var = var / peak
    return SideTables(h, np.minimum(p1, 1.0), var, degenerate)


def extract_features(img: RasterImage, variant: FeatureVariant) -> PixelFeatureSet:
    """Per-pixel feature vectors, row-major, all components in [0, 1]."""
    if variant in (FeatureVariant.RGB3, FeatureVariant.RGB_HIST4) and img.channels != 3:
        raise ValueError(f"variant {variant.tag} needs an RGB image")
    n = img.pixel_count
    gray = to_grayscale(img).data.reshape(n).astype(np.int64)
    g = gray / 255.0
    tables = None
    if variant is not FeatureVariant.RGB3 and variant is not FeatureVariant.GRAY1:
        tables = build_side_tables(to_grayscale(img))

    if variant is FeatureVariant.RGB3:
        vec = img.data.reshape(n, 3) / 255.0
    elif variant is FeatureVariant.RGB_HIST4:
        vec = np.column_stack([img.data.reshape(n, 3) / 255.0, tables.hist[gray]])
    elif variant is FeatureVariant.ISP_GRAY3:
        vec = np.column_stack([tables.cumulative[gray], tables.between_var[gray], g])
    elif variant is FeatureVariant.HIST_GRAY2:
        vec = np.column_stack([tables.hist[gray], g])
    else:
        vec = g[:, None]
    return PixelFeatureSet(variant, np.ascontiguousarray(vec, dtype=np.float64), tables,
                           img.width, img.height)
