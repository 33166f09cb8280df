import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import dwt2_oracle
from wavescale.wavelet import (
    APPROXIMATION,
    DB2,
    HAAR,
    ORIENTATIONS,
    DimensionError,
    WaveletFilter,
    dwt_forward,
    dwt_image,
    dwt_inverse,
    get_filter,
    idwt_image,
    subband_view,
)

FILTERS = ["haar", "db2"]


def image_strategy(side_exp=st.integers(2, 5)):
    return side_exp.flatmap(
        lambda e: arrays(np.float64, (2**e, 2**e), elements=st.floats(-4, 4, allow_nan=False))
    )


# filters


@pytest.mark.parametrize("filt", [HAAR, DB2])
def test_filter_is_orthonormal_qmf(filt):
    L = len(filt.low_pass)
    assert L % 2 == 0 and len(filt.high_pass) == L
    assert np.sum(filt.low_pass**2) == pytest.approx(1.0, abs=1e-15)
    for k in range(L):
        assert filt.high_pass[k] == (-1) ** k * filt.low_pass[L - 1 - k]


def test_unknown_filter_name():
    with pytest.raises(ValueError, match="unknown wavelet filter"):
        get_filter("sym8")
    assert isinstance(get_filter(HAAR), WaveletFilter)


# forward transform


@pytest.mark.parametrize("name", FILTERS)
@pytest.mark.parametrize("levels", [1, 2, 3])
def test_forward_matches_dense_matrix_oracle(name, levels):
    x = np.random.default_rng(levels).random((32, 16))
    pyr = dwt_forward(x, name, levels)
    ref = dwt2_oracle(x, name, levels)
    np.testing.assert_allclose(pyr.approximation, ref["approximation"], atol=1e-12)
    for j in range(1, levels + 1):
        for o in ORIENTATIONS:
            np.testing.assert_allclose(pyr.details[j - 1][o], ref[j, o], atol=1e-12)


def test_two_by_two_haar_example():
    pyr = dwt_forward(np.ones((2, 2)), HAAR, 1)
    np.testing.assert_allclose(pyr.approximation, [[2.0]], atol=1e-15)
    for o in ORIENTATIONS:
        np.testing.assert_allclose(pyr.details[0][o], [[0.0]], atol=1e-15)
    np.testing.assert_allclose(dwt_inverse(pyr, HAAR), np.ones((2, 2)), atol=1e-15)


@pytest.mark.parametrize("name", FILTERS)
def test_constant_image_has_no_details(name):
    pyr = dwt_forward(np.full((32, 32), 0.3), name, 3)
    for bands in pyr.details:
        for b in bands.values():
            assert np.max(np.abs(b)) < 1e-12
    assert np.ptp(pyr.approximation) < 1e-12


def test_energy_matches_direct_sum_on_random_64():
    x = np.random.default_rng(0).random((64, 64))
    pyr = dwt_forward(x, HAAR, 3)
    direct = float(np.sum(x**2))
    coeff = float(np.sum(pyr.approximation**2)) + sum(
        float(np.sum(b**2)) for bands in pyr.details for b in bands.values())
    assert abs(coeff - direct) / direct < 1e-8
    assert pyr.energy() == pytest.approx(coeff, rel=1e-15)


def test_shapes_halve_per_level():
    pyr = dwt_forward(np.zeros((64, 32)), HAAR, 3)
    for j in (1, 2, 3):
        for o in ORIENTATIONS:
            assert pyr.details[j - 1][o].shape == (64 >> j, 32 >> j)
    assert pyr.approximation.shape == (8, 4)


def test_indivisible_shape_names_axis():
    with pytest.raises(DimensionError, match="width"):
        dwt_forward(np.zeros((16, 12)), HAAR, 3)
    with pytest.raises(DimensionError, match="height"):
        dwt_forward(np.zeros((10, 16)), HAAR, 2)


@pytest.mark.parametrize("levels", [0, -1])
def test_bad_levels(levels):
    with pytest.raises(ValueError):
        dwt_forward(np.zeros((8, 8)), HAAR, levels)


def test_non_2d_rejected():
    with pytest.raises(DimensionError):
        dwt_forward(np.zeros((8, 8, 3)), HAAR, 1)


# inverse


def test_zero_pyramid_inverts_to_zero():
    pyr = dwt_forward(np.random.default_rng(1).random((16, 16)), DB2, 2).zeros_like()
    assert np.all(dwt_inverse(pyr, DB2) == 0.0)


def test_filter_mismatch_rejected():
    pyr = dwt_forward(np.zeros((8, 8)), HAAR, 1)
    with pytest.raises(ValueError, match="inverted with"):
        dwt_inverse(pyr, DB2)


@settings(max_examples=40, deadline=None)
@given(x=image_strategy(), name=st.sampled_from(FILTERS), levels=st.integers(1, 4))
def test_perfect_reconstruction_property(x, name, levels):
    levels = min(levels, int(np.log2(x.shape[0])))
    pyr = dwt_forward(x, name, levels)
    assert np.max(np.abs(dwt_inverse(pyr, name) - x)) <= 1e-8 * max(1.0, np.max(np.abs(x)))


@settings(max_examples=40, deadline=None)
@given(x=image_strategy(), name=st.sampled_from(FILTERS))
def test_parseval_property(x, name):
    e = float(np.sum(x**2))
    pyr = dwt_forward(x, name, 2)
    assert abs(pyr.energy() - e) <= 1e-8 * max(e, 1e-300) + 1e-300


@settings(max_examples=30, deadline=None)
@given(x=image_strategy(st.just(4)), y=image_strategy(st.just(4)),
       a=st.floats(-3, 3), b=st.floats(-3, 3), name=st.sampled_from(FILTERS))
def test_linearity_property(x, y, a, b, name):
    pz = dwt_forward(a * x + b * y, name, 3)
    px, py = dwt_forward(x, name, 3), dwt_forward(y, name, 3)
    np.testing.assert_allclose(pz.approximation, a * px.approximation + b * py.approximation, atol=1e-10)
    for j in range(3):
        for o in ORIENTATIONS:
            np.testing.assert_allclose(pz.details[j][o], a * px.details[j][o] + b * py.details[j][o], atol=1e-10)


@pytest.mark.parametrize("name", FILTERS)
@pytest.mark.parametrize("target", [(3, APPROXIMATION), (1, "horizontal"), (2, "vertical"), (3, "diagonal")])
def test_subband_isolation(name, target):
    x = np.random.default_rng(7).random((32, 32))
    pyr = dwt_forward(x, name, 3)
    level, orient = target
    subband_view(pyr, level, orient)[...] = 0.0
    again = dwt_forward(dwt_inverse(pyr, name), name, 3)
    for key in pyr.subband_keys():
        got = subband_view(again, *key)
        if key == target:
            assert np.max(np.abs(got)) < 1e-8
        else:
            np.testing.assert_allclose(got, subband_view(pyr, *key), atol=1e-8)


# views and multi-channel


def test_subband_view_shapes_and_aliasing():
    pyr = dwt_forward(np.random.default_rng(2).random((64, 64)), HAAR, 3)
    assert subband_view(pyr, 1, "horizontal").shape == (32, 32)
    assert subband_view(pyr, None, APPROXIMATION).shape == (8, 8)
    view = subband_view(pyr, 2, "diagonal")
    view[0, 0] = 123.0
    assert pyr.details[1]["diagonal"][0, 0] == 123.0
    with pytest.raises(ValueError):
        subband_view(pyr, 4, "horizontal")
    with pytest.raises(ValueError):
        subband_view(pyr, 1, "sideways")


def test_dwt_image_channels():
    rgb = np.full((16, 16, 3), 0.5)
    pyrs = dwt_image(rgb, HAAR, 2)
    assert len(pyrs) == 3
    assert all(np.max(np.abs(b)) < 1e-12 for p in pyrs for bands in p.details for b in bands.values())
    assert len(dwt_image(np.zeros((16, 16)), HAAR, 2)) == 1


def test_channel_permutation_equivariance():
    x = np.random.default_rng(3).random((16, 16, 3))
    perm = [2, 0, 1]
    a = dwt_image(x, DB2, 2)
    b = dwt_image(x[:, :, perm], DB2, 2)
    for i, p in enumerate(perm):
        np.testing.assert_array_equal(b[i].approximation, a[p].approximation)
    np.testing.assert_allclose(idwt_image(a, DB2), x, atol=1e-12)
