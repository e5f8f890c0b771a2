import numpy as np
import pytest

from flowsleuth.imageops import GRAY_WEIGHTS, bilinear_resize, to_grayscale, warp_bilinear


def test_grayscale_weights_are_itu601():
    assert GRAY_WEIGHTS == (0.299, 0.587, 0.114)
    assert abs(sum(GRAY_WEIGHTS) - 1.0) < 1e-12


def test_grayscale_pure_channels():
    img = np.zeros((2, 3, 3), dtype=np.uint8)
    img[0, 0] = (255, 0, 0)
    img[0, 1] = (0, 255, 0)
    img[0, 2] = (0, 0, 255)
    img[1, 0] = (255, 255, 255)
    g = to_grayscale(img)
    assert g.dtype == np.float64
    assert g[0, 0] == pytest.approx(255 * 0.299)
    assert g[0, 1] == pytest.approx(255 * 0.587)
    assert g[0, 2] == pytest.approx(255 * 0.114)
    assert g[1, 0] == pytest.approx(255.0)


def test_grayscale_passthrough_for_2d():
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    g = to_grayscale(img)
    assert np.array_equal(g, img.astype(np.float64))


def test_resize_identity():
    rng = np.random.default_rng(0)
    img = rng.uniform(0, 255, size=(17, 9))
    out = bilinear_resize(img, 17, 9)
    assert np.allclose(out, img)


def test_resize_checkerboard_halving_averages():
    # 2x downsample with half-pixel alignment lands exactly between the four
    # parent pixels, so a 0/1 checkerboard averages to one half everywhere
    board = np.indices((8, 8)).sum(axis=0) % 2
    out = bilinear_resize(board.astype(np.float64), 4, 4)
    assert np.allclose(out, 0.5)


def test_resize_preserves_constant():
    img = np.full((11, 13), 7.25)
    for shape in ((5, 5), (22, 26), (7, 31)):
        assert np.allclose(bilinear_resize(img, *shape), 7.25)


def test_warp_zero_flow_is_identity():
    rng = np.random.default_rng(1)
    img = rng.uniform(0, 255, size=(12, 10))
    zero = np.zeros((12, 10))
    assert np.allclose(warp_bilinear(img, zero, zero), img)


def test_warp_integer_shift_matches_roll_interior():
    rng = np.random.default_rng(2)
    img = rng.uniform(0, 255, size=(16, 16))
    u = np.full((16, 16), 2.0)  # sample from x+2: content moves left
    v = np.zeros((16, 16))
    warped = warp_bilinear(img, u, v)
    assert np.allclose(warped[:, :-2], img[:, 2:])
