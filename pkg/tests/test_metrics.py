from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from leafseg.metrics import (FILTER_MARGIN, SEGMENTATION_MARGIN, HitTally, percent_hits,
                             score_hits, validation_mse)


@pytest.mark.parametrize("desired, output, margin, hit", [
    (100, 150, SEGMENTATION_MARGIN, True),
    (0, 64, SEGMENTATION_MARGIN, False),
    (0, 63, SEGMENTATION_MARGIN, True),
    (100, 107, FILTER_MARGIN, False),
    (100, 106, FILTER_MARGIN, True),
    (100, 94, FILTER_MARGIN, True),
    (100, 93, FILTER_MARGIN, False),
])
def test_score_hits_boundaries(desired, output, margin, hit):
    tally = score_hits(np.array([output]), np.array([desired]), margin)
    assert (tally.hits, tally.errors) == ((1, 0) if hit else (0, 1))


def test_strict_bound_on_exact_margin():
    # margin 1/5 of 255 is exactly 51: equality counts as an error
    assert score_hits(np.array([151]), np.array([100]), Fraction(1, 5)).errors == 1
    assert score_hits(np.array([150.0]), np.array([100.0]), Fraction(1, 5)).hits == 1


def test_multichannel_samples_tally_separately():
    out = np.array([[[10, 20, 30]]], dtype=np.uint8)
    ref = np.array([[[10, 40, 30]]], dtype=np.uint8)
    tally = score_hits(out, ref, FILTER_MARGIN)
    assert (tally.hits, tally.errors) == (2, 1)


def test_dimension_mismatch():
    with pytest.raises(ValueError):
        score_hits(np.zeros(3), np.zeros(4))


@pytest.mark.parametrize("h, e, pct", [(97, 3, 97.0), (5, 0, 100.0), (0, 8, 0.0)])
def test_percent_hits(h, e, pct):
    assert percent_hits(HitTally(h, e)) == pct


def test_percent_hits_empty():
    with pytest.raises(ValueError):
        percent_hits(HitTally(0, 0))


def test_tallies_merge():
    a = score_hits(np.array([1, 200]), np.array([0, 0]))
    b = score_hits(np.array([3]), np.array([0]))
    merged = a + b
    assert (merged.hits, merged.errors) == (2, 1)


@given(arrays(np.uint8, 30), arrays(np.uint8, 30), st.integers(1, 40), st.integers(1, 40))
def test_wider_margin_never_loses_hits(out, ref, a, b):
    lo, hi = sorted((Fraction(1, a), Fraction(1, b)))
    assert score_hits(out, ref, hi).hits >= score_hits(out, ref, lo).hits


@given(arrays(np.uint8, 25), arrays(np.uint8, 25))
def test_score_order_free_and_bounded(out, ref):
    perm = np.random.default_rng(0).permutation(25)
    t = score_hits(out, ref)
    assert t == score_hits(out[perm], ref[perm])
    assert 0.0 <= percent_hits(t) <= 100.0


def test_validation_mse_cases():
    assert validation_mse([0.2, 0.4], [0.2, 0.4]) == 0.0
    assert validation_mse([1.0], [0.0]) == 1.0
    assert validation_mse(np.full(10, 0.6), np.full(10, 0.5)) == pytest.approx(0.01, abs=1e-15)


def test_validation_mse_errors():
    with pytest.raises(ValueError):
        validation_mse([1, 2], [1])
    with pytest.raises(ValueError):
        validation_mse([], [])


@given(arrays(np.float64, 12, elements=st.floats(-1, 1)), arrays(np.float64, 12, elements=st.floats(0, 1)))
def test_validation_mse_nonnegative(y, d):
    mse = validation_mse(y, d)
    assert mse >= 0
    if np.array_equal(y, d):
        assert mse == 0
    if mse == 0:
        # tiny residuals may underflow when squared
        assert np.allclose(y, d, rtol=0, atol=1e-150)
