import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from consensus_attack.constraints import Budget
from consensus_attack.exceptions import InvalidConfigError, InvalidInputError, ShapeError
from consensus_attack.spaces import (
    BoxSpace,
    DctSpace,
    DirectSpace,
    LowResSpace,
    PixelSpace,
    SquareSpace,
    TanhSpace,
    apply_dct,
    apply_direct,
    apply_lowres,
    apply_pixels,
    apply_squares,
    clip_range,
    dct_forward,
    dct_inverse,
    dct_place,
    make_space,
    pixel_gamma,
    square_masks,
    stripes_image,
    upsample_nearest,
)


def dct_matrix(n):
    """Explicit orthonormal DCT-II matrix, row u = basis function u."""
    k = np.arange(n)
    m = np.cos(np.pi * (2 * k[None, :] + 1) * k[:, None] / (2 * n))
    m[0] *= math.sqrt(1.0 / n)
    m[1:] *= math.sqrt(2.0 / n)
    return m


# --- clip and direct -----------------------------------------------------------

def test_clip_identity_and_clamp():
    z = np.array([[[0.0, 0.3, 1.0]]])
    np.testing.assert_array_equal(clip_range(z), z)
    np.testing.assert_array_equal(clip_range(np.array([[[-0.2, 1.7]]])), [[[0.0, 1.0]]])


@given(arrays(np.float64, (2, 3, 3), elements=st.floats(-5, 5)))
def test_clip_idempotent(z):
    once = clip_range(z)
    np.testing.assert_array_equal(clip_range(once), once)


def test_clip_rejects_nan():
    with pytest.raises(InvalidInputError):
        clip_range(np.array([np.nan]))


def test_apply_direct_examples():
    x = np.full((1, 2, 2), 0.5)
    np.testing.assert_array_equal(apply_direct(np.zeros(4), x), x)
    np.testing.assert_array_equal(apply_direct(np.ones(4), x), np.ones((1, 2, 2)))
    with pytest.raises(ShapeError):
        apply_direct(np.zeros(3), x)


@settings(max_examples=50)
@given(arrays(np.float64, 12, elements=st.floats(-2, 2)), st.integers(0, 1000))
def test_apply_direct_lipschitz(s, seed):
    x = np.random.default_rng(seed).random((3, 2, 2))
    assert np.max(np.abs(apply_direct(s, x) - x)) <= np.max(np.abs(s))


# --- low resolution ------------------------------------------------------------

def test_lowres_full_size_equals_direct():
    rng = np.random.default_rng(0)
    x, s = rng.random((2, 4, 4)), rng.uniform(-0.3, 0.3, 32)
    np.testing.assert_array_equal(apply_lowres(s, x, (4, 4)), apply_direct(s, x))


def test_lowres_tiles():
    s = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    up = upsample_nearest(s, 4, 4)
    expected = np.array([[[1, 1, 2, 2], [1, 1, 2, 2], [3, 3, 4, 4], [3, 3, 4, 4]]], dtype=float)
    np.testing.assert_array_equal(up, expected)


def test_lowres_zero_is_identity():
    x = np.random.default_rng(1).random((3, 6, 6))
    np.testing.assert_array_equal(apply_lowres(np.zeros(3 * 3 * 2), x, (3, 2)), x)


def test_lowres_rejects_large_grid():
    with pytest.raises(InvalidConfigError):
        apply_lowres(np.zeros(25), np.zeros((1, 4, 4)), (5, 5))


# --- pixels -------------------------------------------------------------------

def test_pixel_gamma_examples():
    assert pixel_gamma((0.5, 0.5), 224, 224) == (112, 112)
    assert pixel_gamma((0.0, 0.0), 32, 32) == (0, 0)
    assert pixel_gamma((1.0, 1.0), 32, 32) == (31, 31)


def test_pixel_gamma_rejects_outside():
    with pytest.raises(InvalidInputError):
        pixel_gamma((1.2, 0.0), 4, 4)


def test_apply_pixels_examples():
    x = np.random.default_rng(2).random((3, 4, 4))
    np.testing.assert_array_equal(apply_pixels(np.array([0, 0, 0, 0.4, 0.7]), x), x)
    out = apply_pixels(np.array([0.3, 0.4, 0.5, 0.0, 0.0]), np.zeros((3, 4, 4)))
    np.testing.assert_array_equal(out[:, 0, 0], [0.3, 0.4, 0.5])
    assert np.count_nonzero(out) == 3


def test_apply_pixels_same_position_adds():
    x = np.full((1, 3, 3), 0.1)
    out = apply_pixels(np.array([0.2, 0.5, 0.5, 0.3, 0.5, 0.5]), x)
    assert out[0, 1, 1] == pytest.approx(0.6)
    out = apply_pixels(np.array([0.7, 0.5, 0.5, 0.6, 0.5, 0.5]), x)
    assert out[0, 1, 1] == 1.0


# --- DCT -----------------------------------------------------------------------

def test_dct_matches_explicit_matrix():
    rng = np.random.default_rng(3)
    x = rng.random((2, 5, 7))
    expected = np.einsum("uh,chw,vw->cuv", dct_matrix(5), x, dct_matrix(7))
    np.testing.assert_allclose(dct_forward(x), expected, atol=1e-12)


def test_dct_constant_2x2():
    v = 0.3
    z = dct_forward(np.full((3, 2, 2), v))
    np.testing.assert_allclose(z[:, 0, 0], 2 * v, atol=1e-15)
    z[:, 0, 0] = 0
    assert np.max(np.abs(z)) < 1e-15


def test_dct_isometry_and_roundtrip():
    rng = np.random.default_rng(4)
    for _ in range(10):
        x = rng.random((3, 8, 8))
        assert abs(np.linalg.norm(dct_forward(x)) / np.linalg.norm(x) - 1) < 1e-6
        assert np.max(np.abs(dct_inverse(dct_forward(x)) - x)) < 1e-6


def test_dct_place():
    s = np.random.default_rng(5).random((2, 3, 3))
    np.testing.assert_array_equal(dct_place(s, 3, 3), s)
    one = np.zeros((1, 2, 2))
    one[0, 1, 0] = 2.0
    placed = dct_place(one, 5, 5)
    assert np.count_nonzero(placed) == 1 and placed[0, 1, 0] == 2.0
    assert np.linalg.norm(dct_place(s, 6, 8)) == np.linalg.norm(s)


def test_apply_dct_zero_and_bound():
    rng = np.random.default_rng(6)
    x = rng.random((3, 8, 8))
    np.testing.assert_allclose(apply_dct(np.zeros(3 * 16), x, 4), x, atol=1e-15)
    for _ in range(20):
        s = rng.standard_normal(3 * 16)
        assert np.linalg.norm(apply_dct(s, x, 4) - x) <= np.linalg.norm(s) + 1e-6


def test_dct_space_latent_dim():
    assert DctSpace((3, 224, 224), Budget("l2", 5.0), 28).latent_dim == 2352


# --- squares -------------------------------------------------------------------

def _square_ctx(c=3, h=8, w=8, p=1, eps=0.1, seed=0):
    rng = np.random.default_rng(seed)
    zeta = rng.choice([-eps, eps], size=(p, c))
    return zeta, stripes_image((c, h, w), eps, rng)


def test_square_zero_side_is_single_pixel():
    zeta, stripes = _square_ctx()
    x = np.full((3, 8, 8), 0.5)
    out = apply_squares(np.array([0.0, 0.5, 0.5]), x, zeta, stripes, 0.1)
    base = np.clip(stripes, -0.1, 0.1) + x
    diff = np.any(out != base, axis=0)
    assert diff.sum() <= 1
    assert square_masks(np.array([0.0, 0.5, 0.5]), 8, 8).sum() == 1


def test_square_full_side_covers_image():
    zeta, stripes = _square_ctx()
    x = np.full((3, 8, 8), 0.5)
    out = apply_squares(np.array([1.0, 0.2, 0.9]), x, zeta, stripes, 0.1)
    expected = x + np.clip(zeta[0][:, None, None] + stripes, -0.1, 0.1)
    np.testing.assert_allclose(out, expected, atol=1e-15)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 4), st.floats(1e-3, 0.5))
def test_square_budget_bit_exact(seed, p, eps):
    rng = np.random.default_rng(seed)
    zeta, stripes = _square_ctx(p=p, eps=eps, seed=seed)
    x = rng.random((3, 8, 8))
    out = apply_squares(rng.random(3 * p), x, zeta, stripes, eps)
    assert np.max(np.abs(out - x)) <= eps
    assert out.min() >= 0 and out.max() <= 1


def test_stripes_constant_down_columns():
    s = stripes_image((2, 5, 4), 0.2, 0)
    assert np.all(s == s[:, :1, :])
    assert set(np.unique(s)) <= {-0.2, 0.2}


# --- space objects ---------------------------------------------------------------

SPACES = [
    lambda: DirectSpace((2, 4, 4), Budget("linf", 0.1)),
    lambda: DirectSpace((2, 4, 4), Budget("l2", 0.5)),
    lambda: LowResSpace((2, 4, 4), Budget("linf", 0.1), (2, 2)),
    lambda: PixelSpace((2, 4, 4), 2),
    lambda: DctSpace((2, 4, 4), Budget("l2", 0.5), 2),
    lambda: SquareSpace((2, 4, 4), 0.1, 3, seed=0),
    lambda: TanhSpace(DirectSpace((2, 4, 4), Budget("linf", 0.1))),
]


@pytest.mark.parametrize("factory", SPACES)
def test_space_samples_feasible_and_queries_in_budget(factory):
    space = factory()
    rng = np.random.default_rng(0)
    x = rng.random((2, 4, 4))
    S = space.sample(rng, 20)
    assert S.shape == (20, space.latent_dim)
    np.testing.assert_array_equal(space.project(S), S)
    for s in S:
        img = space.query_image(s * 3.0, x)
        assert img.min() >= 0 and img.max() <= 1
        if space.budget is not None:
            if space.budget.norm == "linf":
                assert np.max(np.abs(img - x)) <= space.budget.epsilon
            else:
                assert np.linalg.norm(img - x) <= space.budget.epsilon * (1 + 1e-12)


def test_neutral_latent_leaves_image_unchanged():
    x = np.random.default_rng(1).random((2, 4, 4))
    for factory in SPACES[:3] + SPACES[4:5]:
        space = factory()
        np.testing.assert_allclose(space.query_image(space.neutral(), x), x, atol=1e-15)


def test_box_space():
    space = BoxSpace(3, -1, 2)
    S = space.sample(0, 100)
    assert S.min() >= -1 and S.max() <= 2
    np.testing.assert_array_equal(space.project(np.array([5.0, -5.0, 0.0])), [2.0, -1.0, 0.0])
    with pytest.raises(InvalidConfigError):
        BoxSpace(2, 1, 0)


def test_make_space():
    assert make_space("lowres", (3, 8, 8), 0.1, low_shape=(4, 4)).latent_dim == 48
    assert make_space("square", (3, 8, 8), 0.1, n_squares=5).latent_dim == 15
    assert isinstance(make_space("tanh", (1, 4, 4), 0.1), TanhSpace)
    with pytest.raises(InvalidConfigError):
        make_space("wavelet", (1, 4, 4))
