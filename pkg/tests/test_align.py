import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nest_ssl.align import AlignConfig, align_targets, downsample_mask, loss_positions, num_windows
from nest_ssl.errors import TooShort
from nest_ssl.masking import mask_from_starts
from nest_ssl.quantizer import init_quantizer
from oracles import brute_force_window_tokens


def test_full_window_selected():
    sel = downsample_mask(np.ones(8, bool))
    assert sel.selected.tolist() == [True]
    assert sel.mask_fraction.tolist() == [1.0]


def test_seven_of_eight_rejected():
    m = np.ones(8, bool)
    m[3] = False
    assert downsample_mask(m).selected.tolist() == [False]
    assert downsample_mask(m, AlignConfig(threshold=0.875)).selected.tolist() == [True]


def test_trailing_remainder_dropped():
    assert num_windows(83) == 10
    assert len(downsample_mask(np.ones(83, bool))) == 10


def test_too_short():
    with pytest.raises(TooShort):
        downsample_mask(np.ones(7, bool))


def test_exhaustive_single_window():
    for bits in itertools.product([False, True], repeat=8):
        sel = downsample_mask(np.array(bits))
        assert sel.selected[0] == (sum(bits) >= 7.2)
        assert sel.mask_fraction[0] == sum(bits) / 8


def test_accepts_mask_spec():
    spec = mask_from_starts(40, [8], 16)
    assert loss_positions(downsample_mask(spec)).tolist() == [1, 2]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.booleans(), min_size=8, max_size=200), st.data())
def test_monotone_in_mask(bits, data):
    m = np.array(bits)
    extra = np.array(data.draw(st.lists(st.booleans(), min_size=len(bits), max_size=len(bits))))
    a = downsample_mask(m).selected
    b = downsample_mask(m | extra).selected
    assert np.all(b >= a)


def test_targets_match_brute_force():
    q = init_quantizer(42, 80, 16, 512)
    frames = np.random.default_rng(0).standard_normal((16, 80))
    assert align_targets(q, frames).tokens.tolist() == brute_force_window_tokens(frames, q.projection, q.codebook)


def test_targets_rate_and_length():
    q = init_quantizer(1, 80, 16, 64)
    seq = align_targets(q, np.random.default_rng(1).standard_normal((83, 80)))
    assert len(seq) == 10 and seq.rate == 12.5


def test_averaging_is_linear():
    # constant window: pooled projection equals the single-frame projection
    q = init_quantizer(7, 80, 16, 256)
    frame = np.random.default_rng(2).standard_normal(80)
    frames = np.tile(frame, (8, 1))
    from nest_ssl.quantizer import quantize_frame
    assert align_targets(q, frames).tokens[0] == quantize_frame(q, frame)


def test_loss_positions():
    assert loss_positions(np.array([False, True, True, False])).tolist() == [1, 2]
    assert loss_positions(np.zeros(5, bool)).size == 0
