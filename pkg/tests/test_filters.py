import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmgkit.filters import (
    MaskError,
    band_indicator,
    filter_fine,
    filter_level,
    make_mask,
    make_mask_1d,
    make_mask_2d,
    mask_support,
    write_masks_csv,
)
from nmgkit.numerics import angular_frequencies, center


def test_fine_mask_values_by_hand():
    # n = 8: centered bins phi = -pi, -3pi/4, ..., 3pi/4
    m1 = make_mask_1d(1, 3, 8).values
    np.testing.assert_allclose(m1, np.sqrt(np.abs(np.arange(-4, 4)) / 4))
    m2 = make_mask_1d(2, 3, 8).values
    np.testing.assert_allclose(m2, [0, 0, 1, np.sqrt(0.5), 0, np.sqrt(0.5), 1, 0])


@pytest.mark.parametrize("l", [1, 2, 3])
def test_fine_mask_peaks_at_band_edge_and_vanishes_outside(l):
    n, L = 64, 4
    m = make_mask_1d(l, L, n).values
    phi = np.abs(angular_frequencies(n))
    edge = np.pi / 2 ** (l - 1)
    assert np.all(m[phi > edge + 1e-12] == 0)
    assert np.isclose(m[np.isclose(phi, edge)].max(), 1.0)
    assert m[phi == 0][0] == 0.0
    inside = phi <= edge
    assert np.all(np.diff(m[inside & (angular_frequencies(n) >= 0)]) > 0)


def test_level_mask_matches_fine_mask_on_visible_frequencies():
    n, L = 64, 4
    for l in range(1, L):
        fine = make_mask_1d(l, L, n).values
        n_l = n // 2 ** (l - 1)
        level = make_mask_1d(l, L, n_l, "level").values
        # level bin j has fine frequency phi_j / 2^(l-1), i.e. the central n_l fine bins
        start = n // 2 - n_l // 2
        np.testing.assert_allclose(level, fine[start:start + n_l], atol=1e-15)


def test_2d_mask_uses_max_norm():
    m = make_mask_2d(1, 2, (8, 8)).values
    p = np.abs(angular_frequencies(8))
    np.testing.assert_allclose(m, np.sqrt(np.maximum.outer(p, p) / np.pi))
    assert make_mask(1, 2, (8, 8)).shape == (8, 8)


def test_mask_errors():
    with pytest.raises(MaskError, match="out of range"):
        make_mask_1d(4, 4, 16)
    with pytest.raises(MaskError, match="variant"):
        make_mask_1d(1, 4, 16, "coarse")


def test_band_indicators_partition_the_spectrum():
    for shape in [(64,), (32, 32)]:
        L = 4
        total = sum(band_indicator(l, L, shape).astype(int) for l in range(1, L + 1))
        assert np.all(total == 1)
        assert np.array_equal(mask_support(1, L, shape), np.ones(shape, bool))


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), l=st.integers(1, 3))
def test_filter_fine_is_masked_spectrum(seed, l):
    v = np.random.default_rng(seed).standard_normal(32)
    mask = make_mask_1d(l, 4, 32)
    F = np.exp(-2j * np.pi * np.outer(np.arange(32), np.arange(32)) / 32)
    np.testing.assert_allclose(filter_fine(v, mask), mask.values * center(F @ v), atol=1e-11)


def test_filter_level_is_symmetric_and_real():
    mask = make_mask_1d(1, 4, 16, "level")
    M = np.stack([filter_level(e, mask) for e in np.eye(16)], axis=1)
    np.testing.assert_allclose(M, M.T, atol=1e-15)
    # circulant with eigenvalues equal to the mask values
    lam = np.sort(np.linalg.eigvalsh(M))
    np.testing.assert_allclose(lam, np.sort(mask.values), atol=1e-13)
    # removes the mean, keeps the highest mode unchanged
    assert abs(filter_level(np.ones(16), mask)).max() < 1e-15
    alt = (-1.0) ** np.arange(16)
    np.testing.assert_allclose(filter_level(alt, mask), alt, atol=1e-14)


def test_filter_variant_checks():
    with pytest.raises(MaskError):
        filter_fine(np.ones(16), make_mask_1d(1, 2, 16, "level"))
    with pytest.raises(MaskError, match="does not match"):
        filter_level(np.ones(8), make_mask_1d(1, 2, 16, "level"))


def test_masks_csv(tmp_path):
    path = write_masks_csv(tmp_path / "m.csv", 3, (8,))
    rows = path.read_text().splitlines()
    assert rows[0] == "phi,m_1,m_2" and len(rows) == 9
    path2 = write_masks_csv(tmp_path / "m2.csv", 2, (4, 4))
    assert path2.read_text().splitlines()[0] == "phi1,phi2,m_1"
