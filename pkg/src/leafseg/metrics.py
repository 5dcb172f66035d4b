"""Tolerance-band hit counting and validation error."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .image_core import RasterImage

LMAX = 255
SEGMENTATION_MARGIN = Fraction(1, 4)
FILTER_MARGIN = Fraction(1, 40)


@dataclass(frozen=True)
class HitTally:
    hits: int
    errors: int
    margin_fraction: Fraction = SEGMENTATION_MARGIN
    lmax: int = LMAX

    @property
    def total(self) -> int:
        return self.hits + self.errors

    def __add__(self, other: "HitTally") -> "HitTally":
        if (self.margin_fraction, self.lmax) != (other.margin_fraction, other.lmax):
            raise ValueError("cannot merge tallies with different margins")
        return HitTally(self.hits + other.hits, self.errors + other.errors,
                        self.margin_fraction, self.lmax)


def score_hits(output, desirable, margin_fraction=SEGMENTATION_MARGIN, lmax: int = LMAX) -> HitTally:
    """Count samples strictly inside ``desirable +/- margin_fraction * lmax``.

    Works on gray or multi-channel images (every channel sample counts once)
    and on plain integer arrays. Bound comparisons are exact: with
    ``m = a / b`` the test ``|out - D| < m`` becomes ``b * |out - D| < a``.
    """
    out = output.data if isinstance(output, RasterImage) else np.asarray(output)
    ref = desirable.data if isinstance(desirable, RasterImage) else np.asarray(desirable)
    if out.shape != ref.shape:
        raise ValueError(f"dimension mismatch: {out.shape} vs {ref.shape}")
    margin = Fraction(margin_fraction) * lmax
    if np.issubdtype(out.dtype, np.integer) and np.issubdtype(ref.dtype, np.integer):
        diff = np.abs(out.astype(np.int64) - ref.astype(np.int64))
        hits = int(np.count_nonzero(diff * margin.denominator < margin.numerator))
    else:
        diff = np.abs(out.astype(np.float64) - ref.astype(np.float64))
        hits = int(np.count_nonzero(diff < float(margin)))
    return HitTally(hits, int(diff.size) - hits, Fraction(margin_fraction), lmax)


def percent_hits(tally: HitTally) -> float:
    if tally.total == 0:
        raise ValueError("empty tally")
    return 100.0 * tally.hits / tally.total


def validation_mse(outputs, desirables) -> float:
    """Mean of squared residuals between outputs and targets (both normalized)."""
    y = np.asarray(outputs, dtype=np.float64).reshape(-1)
    d = np.asarray(desirables, dtype=np.float64).reshape(-1)
    if y.size != d.size:
        raise ValueError(f"length mismatch: {y.size} outputs vs {d.size} targets")
    if y.size == 0:
        raise ValueError("no samples")
    return float(np.mean((y - d) ** 2))
