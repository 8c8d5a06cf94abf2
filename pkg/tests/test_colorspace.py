import math

import numpy as np
import pytest

from domalign import channel_histogram, lab_to_rgb, rgb_to_lab


def reference_rgb_to_lab(r, g, b):
    """Scalar CIELAB (sRGB / D65) from first principles, for cross-checking."""

    def inv_compand(c):
        return ((c + 0.055) / 1.055) ** 2.4 if c > 0.04045 else c / 12.92

    rl, gl, bl = inv_compand(r), inv_compand(g), inv_compand(b)
    x = 0.4124564 * rl + 0.3575761 * gl + 0.1804375 * bl
    y = 0.2126729 * rl + 0.7151522 * gl + 0.0721750 * bl
    z = 0.0193339 * rl + 0.1191920 * gl + 0.9503041 * bl

    def f(t):
        return t ** (1 / 3) if t > (6 / 29) ** 3 else t / (3 * (6 / 29) ** 2) + 4 / 29

    fx, fy, fz = f(x / 0.95047), f(y / 1.0), f(z / 1.08883)
    lightness = 116 * fy - 16
    return lightness, 500 * (fx - fy), 200 * (fy - fz)


def test_white_point():
    lab = rgb_to_lab(np.ones((1, 1, 3)))[0, 0]
    assert lab[0] == pytest.approx(1.0, abs=1e-6)
    assert lab[1] == pytest.approx(128 / 255, abs=1e-3)
    assert lab[2] == pytest.approx(128 / 255, abs=1e-3)


def test_black_point():
    lab = rgb_to_lab(np.zeros((1, 1, 3)))[0, 0]
    assert lab[0] == pytest.approx(0.0, abs=1e-9)


def test_matches_independent_reference_colorimetry():
    rng = np.random.default_rng(0)
    pixels = rng.random((50, 3))
    lab = rgb_to_lab(pixels.reshape(1, -1, 3))[0]
    for (r, g, b), got in zip(pixels, lab):
        want_l, want_a, want_b = reference_rgb_to_lab(r, g, b)
        assert got[0] == pytest.approx(want_l / 100.0, abs=1e-4)
        assert got[1] == pytest.approx((want_a + 128) / 255.0, abs=1e-4)
        assert got[2] == pytest.approx((want_b + 128) / 255.0, abs=1e-4)


def test_round_trip_within_two_ticks():
    rng = np.random.default_rng(1)
    img = rng.random((20, 20, 3))
    back = lab_to_rgb(rgb_to_lab(img))
    assert np.abs(back - img).max() <= 2 / 255


def test_zero_chroma_full_lightness_is_white():
    lab = np.array([[[1.0, 128 / 255, 128 / 255]]])
    rgb = lab_to_rgb(lab)[0, 0]
    assert np.abs(rgb - 1.0).max() <= 1 / 255


def test_out_of_gamut_clamps():
    lab = np.array([[[0.9, 1.0, 0.0]], [[0.1, 0.0, 1.0]]])
    rgb = lab_to_rgb(lab)
    assert rgb.min() >= 0.0 and rgb.max() <= 1.0


def test_histogram_constant_channels():
    low = channel_histogram(np.zeros((4, 4)))
    assert low.counts[0] == 16 and low.total == 16
    high = channel_histogram(np.ones((4, 4)))
    assert high.counts[255] == 16


def test_histogram_mass_conservation():
    rng = np.random.default_rng(2)
    channel = rng.random((37, 23))
    hist = channel_histogram(channel)
    assert hist.total == 37 * 23
    assert (hist.counts >= 0).all()


def test_histogram_uniform_within_5_sigma():
    rng = np.random.default_rng(3)
    n = 1_000_000
    hist = channel_histogram(rng.random(n))
    expected = n / 256
    sigma = math.sqrt(n * (1 / 256) * (1 - 1 / 256))
    assert np.abs(hist.counts - expected).max() <= 5 * sigma


def test_conversion_is_pixelwise():
    rng = np.random.default_rng(4)
    img = rng.random((6, 6, 3))
    full = rgb_to_lab(img)
    single = rgb_to_lab(img[2:3, 3:4])
    np.testing.assert_allclose(full[2, 3], single[0, 0], atol=1e-12)
