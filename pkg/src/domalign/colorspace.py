"""RGB <-> CIELAB conversion (sRGB companding, D65 white) and channel histograms.

Lab images are stored as H x W x 3 float64 arrays with every channel rescaled
to [0, 1]: L/100 for lightness, (a + 128)/255 and (b + 128)/255 for chroma.
One Histogram type then serves all three channels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

N_BINS = 256

# sRGB linear RGB <-> XYZ (D65), IEC 61966-2-1.
_RGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_XYZ_TO_RGB = np.linalg.inv(_RGB_TO_XYZ)
_WHITE_D65 = np.array([0.95047, 1.00000, 1.08883])


@dataclass
class Histogram:
    """Fixed 256-bin histogram of a [0, 1] scalar channel."""

    counts: np.ndarray

    @property
    def total(self) -> float:
        return float(self.counts.sum())

    def normalized(self) -> np.ndarray:
        return self.counts / self.counts.sum()


def bin_centers() -> np.ndarray:
    """Midpoint value of each histogram bin."""
    return (np.arange(N_BINS) + 0.5) / N_BINS


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c > 0.04045, ((c + 0.055) / 1.055) ** 2.4, c / 12.92)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.maximum(c, 0.0)
    return np.where(c > 0.0031308, 1.055 * c ** (1.0 / 2.4) - 0.055, 12.92 * c)


def _lab_f(t: np.ndarray) -> np.ndarray:
    delta3 = (6.0 / 29.0) ** 3
    return np.where(t > delta3, np.cbrt(t), t / (3 * (6.0 / 29.0) ** 2) + 4.0 / 29.0)


def _lab_f_inv(t: np.ndarray) -> np.ndarray:
    delta = 6.0 / 29.0
    return np.where(t > delta, t**3, 3 * delta**2 * (t - 4.0 / 29.0))


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """Convert an RGB image in [0, 1] to normalized-Lab storage."""
    linear = _srgb_to_linear(np.asarray(img, dtype=np.float64))
    xyz = linear @ _RGB_TO_XYZ.T
    f = _lab_f(xyz / _WHITE_D65)
    lightness = 116.0 * f[..., 1] - 16.0
    a = 500.0 * (f[..., 0] - f[..., 1])
    b = 200.0 * (f[..., 1] - f[..., 2])
    out = np.stack([lightness / 100.0, (a + 128.0) / 255.0, (b + 128.0) / 255.0], axis=-1)
    return np.clip(out, 0.0, 1.0)


def lab_to_rgb(img: np.ndarray) -> np.ndarray:
    """Convert normalized-Lab storage back to RGB; out-of-gamut values clamp to [0, 1]."""
    img = np.asarray(img, dtype=np.float64)
    lightness = img[..., 0] * 100.0
    a = img[..., 1] * 255.0 - 128.0
    b = img[..., 2] * 255.0 - 128.0
    fy = (lightness + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1) * _WHITE_D65
    rgb = _linear_to_srgb(xyz @ _XYZ_TO_RGB.T)
    return np.clip(rgb, 0.0, 1.0)


def channel_histogram(channel: np.ndarray) -> Histogram:
    """Histogram of a [0, 1] channel; bin index = min(floor(v * 256), 255)."""
    values = np.asarray(channel, dtype=np.float64).ravel()
    idx = np.minimum((values * N_BINS).astype(np.int64), N_BINS - 1)
    counts = np.bincount(idx, minlength=N_BINS).astype(np.float64)
    return Histogram(counts)
