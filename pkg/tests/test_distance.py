import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from leafgrasp.distance import dilate, disk_offsets, distance_transform, edt_sq, erode, signed_distance_field
from oracles import brute_distance_transform, brute_sdf, random_mask


def test_single_pixel_hole():
    m = np.ones((5, 5), dtype=bool)
    m[2, 2] = False
    d = distance_transform(m).values
    assert d[2, 2] == 0.0
    assert d[0, 0] == pytest.approx(np.sqrt(8))
    assert d[2, 0] == pytest.approx(2.0)


def test_degenerate_masks_flagged():
    for m in (np.zeros((4, 6), bool), np.ones((4, 6), bool)):
        df = distance_transform(m)
        assert df.degenerate
        assert np.all(df.values == 6.0)
    s = signed_distance_field(np.ones((3, 3), bool))
    assert s.degenerate and np.all(s.values == -3.0)
    s = signed_distance_field(np.zeros((3, 3), bool))
    assert s.degenerate and np.all(s.values == 3.0)


def test_edt_matches_brute_force(rng):
    for _ in range(40):
        m = random_mask(rng, 20)
        got = distance_transform(m).values
        np.testing.assert_allclose(got, brute_distance_transform(m), atol=1e-9)


def test_sdf_matches_brute_force(rng):
    for _ in range(40):
        m = random_mask(rng, 20)
        got = signed_distance_field(m).values
        np.testing.assert_allclose(got, brute_sdf(m), atol=1e-9)


def test_windowed_sdf_is_a_slice_of_the_full_field(rng):
    for _ in range(60):
        m = random_mask(rng, 24)
        h, w = m.shape
        r0, r1 = sorted(rng.integers(0, h + 1, 2))
        c0, c1 = sorted(rng.integers(0, w + 1, 2))
        full = signed_distance_field(m, origin=(5, 7))
        win = signed_distance_field(m, origin=(5, 7), window=(c0, r0, c1, r1))
        np.testing.assert_array_equal(win.values, full.values[r0:r1, c0:c1])
        assert win.origin == (5 + c0, 7 + r0)


def test_edt_row_range_matches_full(rng):
    m = random_mask(rng, 32)
    full = edt_sq(m)
    h = m.shape[0]
    r0, r1 = 0, h
    if h > 2:
        r0, r1 = 1, h - 1
    np.testing.assert_array_equal(edt_sq(m, (r0, r1)), full[r0:r1])


def test_sdf_window_out_of_bounds():
    with pytest.raises(ValueError):
        signed_distance_field(np.eye(4, dtype=bool), window=(0, 0, 5, 4))


def test_sdf_sign_convention():
    occ = np.zeros((7, 7), bool)
    occ[2:5, 2:5] = True
    s = signed_distance_field(occ).values
    assert s[3, 3] == pytest.approx(-1.5)
    assert s[3, 1] == pytest.approx(0.5)
    assert s[3, 2] == pytest.approx(-0.5)


@settings(max_examples=60, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_sdf_properties(m):
    s = signed_distance_field(m)
    if s.degenerate:
        return
    assert np.all(s.values[m] < 0)
    assert np.all(s.values[~m] > 0)
    # 1-Lipschitz between 4-neighbours, except across the boundary where it jumps by exactly 1
    dv = np.abs(np.diff(s.values, axis=0))
    assert np.all(dv <= 1.0 + 1e-9)
    dh = np.abs(np.diff(s.values, axis=1))
    assert np.all(dh <= 1.0 + 1e-9)


@settings(max_examples=60, deadline=None)
@given(arrays(bool, st.tuples(st.integers(1, 12), st.integers(1, 12))))
def test_edt_nonnegative_and_zero_off_mask(m):
    d = distance_transform(m)
    if d.degenerate:
        return
    assert np.all(d.values[~m] == 0)
    assert np.all(d.values[m] >= 1.0)


def test_dilate_erode_against_disk():
    m = np.zeros((21, 21), bool)
    m[10, 10] = True
    d = dilate(m, 3.0)
    yy, xx = np.indices(m.shape)
    np.testing.assert_array_equal(d, (yy - 10) ** 2 + (xx - 10) ** 2 <= 9)
    assert erode(d, 3.0).sum() == 1
    assert len(disk_offsets(1.0)) == 5
