"""Histogram thresholding and the binary clean-up steps that build training targets."""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .filtering import FilterMask, apply_linear_filter
from .image_core import RasterImage, to_grayscale

NEIGHBOR_MODES = ("WN", "V4", "V8")

# Relative slack used to collect float near-maximizers before the exact comparison.
_NEAR_TIE = 1e-9


class DegenerateHistogramError(ValueError):
    """Histogram has fewer occupied gray levels than requested classes."""


@dataclass(frozen=True, eq=False)
class Histogram:
    counts: np.ndarray
    total: int

    @property
    def nonzero_bins(self) -> int:
        return int(np.count_nonzero(self.counts))


@dataclass(frozen=True)
class DesirableSpec:
    """How a target image is derived from a source image.

    ``keep_class=None`` keeps the class whose mean gray level lies closest to
    ``target_gray`` (the bright, yellowed tissue by default).
    ``erosion_order=0`` skips erosion, giving the "NSeed" variant.
    """

    num_classes: int = 3
    keep_class: Optional[int] = None
    erosion_order: int = 0
    neighbor_mode: str = "WN"
    target_gray: int = 255

    def __post_init__(self):
        if self.num_classes not in (2, 3):
            raise ValueError(f"num_classes must be 2 or 3, got {self.num_classes}")
        if self.keep_class is not None and not 0 <= self.keep_class < self.num_classes:
            raise ValueError(f"keep_class {self.keep_class} out of range for {self.num_classes} classes")
        if self.erosion_order != 0 and (self.erosion_order < 1 or self.erosion_order % 2 == 0):
            raise ValueError(f"erosion order must be 0 or odd, got {self.erosion_order}")
        if self.neighbor_mode not in NEIGHBOR_MODES:
            raise ValueError(f"neighbor mode must be one of {NEIGHBOR_MODES}")

    @property
    def kind(self) -> str:
        return "Seed" if self.erosion_order else "NSeed"


def histogram(plane: RasterImage) -> Histogram:
    if plane.channels != 1:
        raise ValueError("histogram requires a single-channel image")
    counts = np.bincount(plane.data.reshape(-1), minlength=256).astype(np.int64)
    return Histogram(counts, int(counts.sum()))


def _class_term(s, c):
    c = np.asarray(c, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(c > 0, s * s / np.where(c > 0, c, 1.0), 0.0)


def _exact_score(bounds: Sequence[int], cum: np.ndarray, scum: np.ndarray) -> Fraction:
    # sum_k S_k^2 / C_k; equal to N * sigma_B^2 + S_T^2 / N
    score = Fraction(0)
    lo_c = lo_s = 0
    for b in list(bounds) + [255]:
        c = int(cum[b]) - lo_c
        s = int(scum[b]) - lo_s
        if c:
            score += Fraction(s * s, c)
        lo_c, lo_s = int(cum[b]), int(scum[b])
    return score


def otsu_thresholds(hist: Histogram, num_classes: int = 2) -> tuple[int, ...]:
    """Thresholds maximizing the between-class variance.

    Class ``i`` covers gray levels ``(t[i-1], t[i]]``. Every candidate tuple is
    scored; near-maximal candidates are re-scored with exact rationals and the
    lexicographically smallest exact maximizer wins.
    """
    if num_classes not in (2, 3):
        raise ValueError(f"num_classes must be 2 or 3, got {num_classes}")
    if hist.nonzero_bins < num_classes:
        raise DegenerateHistogramError(
            f"histogram has {hist.nonzero_bins} occupied bins, need at least {num_classes}")
    counts = np.asarray(hist.counts, dtype=np.int64)
    levels = np.arange(256, dtype=np.int64)
    cum = np.cumsum(counts)
    scum = np.cumsum(levels * counts)
    n, st = cum[-1], scum[-1]

    if num_classes == 2:
        c0, s0 = cum[:255], scum[:255]
        score = _class_term(s0, c0) + _class_term(st - s0, n - c0)
        cands = np.flatnonzero(score >= score.max() * (1 - _NEAR_TIE))[:, None]
    else:
        c0, s0 = cum[:255, None], scum[:255, None]
        c01, s01 = cum[None, :255], scum[None, :255]
        score = (_class_term(s0, c0) + _class_term(s01 - s0, c01 - c0)
                 + _class_term(st - s01, n - c01))
        t1, t2 = np.meshgrid(np.arange(255), np.arange(255), indexing="ij")
        score = np.where(t1 < t2, score, -np.inf)
        cands = np.argwhere(score >= score.max() * (1 - _NEAR_TIE))

    # Candidates come out in lexicographic order. Tuples that cut the histogram
    # at the same cumulative counts describe the same partition, so only the
    # first (smallest) tuple of each partition needs exact scoring.
    _, first = np.unique(cum[cands], axis=0, return_index=True)
    best, best_val = None, None
    for i in sorted(first):
        cand = tuple(int(b) for b in cands[i])
        val = _exact_score(cand, cum, scum)
        if best_val is None or val > best_val:
            best, best_val = cand, val
    return best


def class_index(plane: RasterImage, thresholds: Sequence[int]) -> np.ndarray:
    """Per-pixel class label for sorted ``thresholds``."""
    return np.searchsorted(np.asarray(thresholds), plane.plane(), side="left")


def apply_threshold_select(plane: RasterImage, thresholds: Sequence[int], keep_class: int) -> np.ndarray:
    """Boolean mask of the pixels falling in ``keep_class``."""
    thresholds = list(thresholds)
    if thresholds != sorted(thresholds):
        raise ValueError("thresholds must be sorted ascending")
    if not 0 <= keep_class <= len(thresholds):
        raise ValueError(f"keep_class {keep_class} out of range for {len(thresholds) + 1} classes")
    return class_index(plane, thresholds) == keep_class


def erode(mask: np.ndarray, k: int) -> np.ndarray:
    """Binary erosion with a k x k square; outside the image counts as unset."""
    if k < 1 or k % 2 == 0:
        raise ValueError(f"erosion order must be a positive odd integer, got {k}")
    mask = np.asarray(mask, dtype=bool)
    if k == 1:
        return mask.copy()
    q = k // 2
    # square structuring element is separable: erode rows, then columns
    padded = np.pad(mask, ((0, 0), (q, q)), constant_values=False)
    rows = sliding_window_view(padded, k, axis=1).all(axis=-1)
    padded = np.pad(rows, ((q, q), (0, 0)), constant_values=False)
    return sliding_window_view(padded, k, axis=0).all(axis=-1)


def neighbor_clean(mask: np.ndarray, mode: str) -> np.ndarray:
    """Drop set pixels with no set neighbour in the 4- or 8-neighbourhood.

    ``WN`` leaves the mask untouched.
    """
    if mode not in NEIGHBOR_MODES:
        raise ValueError(f"neighbor mode must be one of {NEIGHBOR_MODES}, got {mode!r}")
    mask = np.asarray(mask, dtype=bool)
    if mode == "WN":
        return mask.copy()
    h, w = mask.shape
    p = np.pad(mask, 1, constant_values=False)
    near = p[0:h, 1:w + 1] | p[2:h + 2, 1:w + 1] | p[1:h + 1, 0:w] | p[1:h + 1, 2:w + 2]
    if mode == "V8":
        near |= p[0:h, 0:w] | p[0:h, 2:w + 2] | p[2:h + 2, 0:w] | p[2:h + 2, 2:w + 2]
    return mask & near


def pick_keep_class(plane: RasterImage, thresholds: Sequence[int], target_gray: int) -> int:
    """Class whose mean gray level is closest to ``target_gray`` (lowest index on ties)."""
    labels = class_index(plane, thresholds).reshape(-1)
    gray = plane.plane().reshape(-1).astype(np.float64)
    best, best_gap = 0, None
    for c in range(len(thresholds) + 1):
        members = gray[labels == c]
        if members.size == 0:
            continue
        gap = abs(members.mean() - target_gray)
        if best_gap is None or gap < best_gap:
            best, best_gap = c, gap
    return best


def desirable_mask(source: RasterImage, spec: DesirableSpec,
                   preprocess: Optional[FilterMask] = None) -> np.ndarray:
    """Final region mask of :func:`build_desirable`."""
    work = apply_linear_filter(source, preprocess) if preprocess is not None else source
    gray = to_grayscale(work)
    thresholds = otsu_thresholds(histogram(gray), spec.num_classes)
    keep = spec.keep_class
    if keep is None:
        keep = pick_keep_class(gray, thresholds, spec.target_gray)
    mask = apply_threshold_select(gray, thresholds, keep)
    mask = neighbor_clean(mask, spec.neighbor_mode)
    if spec.erosion_order:
        mask = erode(mask, spec.erosion_order)
    return mask


def build_desirable(source: RasterImage, spec: DesirableSpec,
                    preprocess: Optional[FilterMask] = None) -> RasterImage:
    """Gray target image: source gray level inside the selected region, 0 elsewhere.

    Pipeline: optional smoothing, grayscale, histogram, Otsu, class selection,
    neighbour clean-up, then erosion when ``spec.erosion_order`` is non-zero.
    The retained gray values come from the unfiltered source.
    """
    mask = desirable_mask(source, spec, preprocess)
    gray = to_grayscale(source).plane()
    return RasterImage(np.where(mask, gray, 0).astype(np.uint8))
