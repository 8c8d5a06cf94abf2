"""Target-domain pseudo-labeling, stochastic perturbations, and consistency loss.

Pseudo-labels come from the frozen previous-stage model on the unperturbed
image; perturbing the input never changes them. A pixel is valid when its
confidence reaches the adaptive class threshold t_c = min(P_h, P_s_c), where
P_s_c is the confidence reached by at least p% of the class's pixels. The
consistency loss is the summed cross-entropy between valid one-hot
pseudo-labels and the prediction on the perturbed image, with the pseudo-label
grid warped by the same elastic displacement so pixels compare point-to-point.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import imgio
from .errors import WarpMismatchError
from .texture import GRAY_WEIGHTS


@dataclass
class PseudoLabelMap:
    labels: np.ndarray        # (H, W) int
    confidence: np.ndarray    # (H, W) float in [0, 1]


@dataclass
class ThresholdConfig:
    p_high: float = 0.9
    percent: float = 10.0


@dataclass
class CategoryThresholds:
    t: np.ndarray             # (M_c,) per-class confidence threshold
    percentile: np.ndarray    # (M_c,) P_s_c before capping; NaN for absent classes


@dataclass
class PerturbConfig:
    jitter_brightness: float = 0.2
    jitter_contrast: float = 0.2
    jitter_saturation: float = 0.2
    blur_sigma: tuple[float, float] = (0.0, 1.5)
    elastic_grid: int = 32
    elastic_sigma: float = 4.0
    enable_jitter: bool = True
    enable_elastic: bool = True
    enable_blur: bool = True

    @classmethod
    def color_jitter_only(cls) -> "PerturbConfig":
        return cls(enable_elastic=False, enable_blur=False)

    @classmethod
    def disabled(cls) -> "PerturbConfig":
        return cls(enable_jitter=False, enable_elastic=False, enable_blur=False)


@dataclass
class ElasticWarp:
    dy: np.ndarray            # (H, W) vertical displacement in pixels
    dx: np.ndarray            # (H, W) horizontal displacement


def pseudo_labels(pm: np.ndarray) -> PseudoLabelMap:
    """Argmax labels (ties to the lowest class index) with max-probability confidence."""
    probs = np.asarray(pm, dtype=np.float64)
    return PseudoLabelMap(labels=np.argmax(probs, axis=-1), confidence=np.max(probs, axis=-1))


def category_thresholds(
    pl: PseudoLabelMap, cfg: ThresholdConfig, class_count: int
) -> CategoryThresholds:
    """Adaptive per-class thresholds t_c = min(P_h, P_s_c).

    P_s_c is the largest confidence reached by at least percent% of class-c
    pixels (lower tie side), so the valid fraction is >= percent/100 whenever
    the percentile rule, not the cap, binds. Classes without pixels fall back
    to the cap.
    """
    t = np.full(class_count, cfg.p_high)
    percentile = np.full(class_count, np.nan)
    labels = pl.labels.ravel()
    confidence = pl.confidence.ravel()
    for c in range(class_count):
        confs = confidence[labels == c]
        if confs.size == 0:
            continue
        k = int(np.ceil(cfg.percent / 100.0 * confs.size))
        value = np.sort(confs)[::-1][k - 1]
        percentile[c] = value
        t[c] = min(cfg.p_high, value)
    return CategoryThresholds(t=t, percentile=percentile)


def _bilinear_sample(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """Sample an H x W x C image at fractional coordinates, replicating borders."""
    h, w = img.shape[:2]
    ys = np.clip(ys, 0.0, h - 1.0)
    xs = np.clip(xs, 0.0, w - 1.0)
    y0 = np.floor(ys).astype(np.int64)
    x0 = np.floor(xs).astype(np.int64)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[..., None]
    wx = (xs - x0)[..., None]
    top = img[y0, x0] * (1.0 - wx) + img[y0, x1] * wx
    bottom = img[y1, x0] * (1.0 - wx) + img[y1, x1] * wx
    return top * (1.0 - wy) + bottom * wy


def _nearest_indices(shape, warp: ElasticWarp):
    h, w = shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    yn = np.clip(np.rint(yy + warp.dy), 0, h - 1).astype(np.int64)
    xn = np.clip(np.rint(xx + warp.dx), 0, w - 1).astype(np.int64)
    return yn, xn


def _elastic_field(shape, grid: int, sigma: float, rng: np.random.Generator) -> ElasticWarp:
    """Coarse Gaussian displacements, clipped to the grid spacing, bilinearly upsampled."""
    h, w = shape
    rows = int(np.ceil(h / grid)) + 1
    cols = int(np.ceil(w / grid)) + 1
    coarse = rng.normal(0.0, sigma, size=(rows, cols, 2))
    coarse = np.clip(coarse, -float(grid), float(grid))
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    field = _bilinear_sample(coarse, yy / grid, xx / grid)
    return ElasticWarp(dy=field[..., 0], dx=field[..., 1])


def _gaussian_blur(img: np.ndarray, sigma: float) -> np.ndarray:
    radius = max(1, int(np.ceil(3.0 * sigma)))
    taps = np.arange(-radius, radius + 1, dtype=np.float64)
    kernel = np.exp(-(taps**2) / (2.0 * sigma**2))
    kernel /= kernel.sum()
    h, w = img.shape[:2]
    padded = np.pad(img, ((radius, radius), (0, 0), (0, 0)), mode="reflect")
    out = np.zeros_like(img)
    for i, k in enumerate(kernel):
        out += k * padded[i : i + h]
    padded = np.pad(out, ((0, 0), (radius, radius), (0, 0)), mode="reflect")
    out = np.zeros_like(img)
    for i, k in enumerate(kernel):
        out += k * padded[:, i : i + w]
    return out


def _color_jitter(img: np.ndarray, cfg: PerturbConfig, rng: np.random.Generator) -> np.ndarray:
    fb = 1.0 + rng.uniform(-cfg.jitter_brightness, cfg.jitter_brightness)
    fc = 1.0 + rng.uniform(-cfg.jitter_contrast, cfg.jitter_contrast)
    fs = 1.0 + rng.uniform(-cfg.jitter_saturation, cfg.jitter_saturation)
    out = img * fb
    gray_mean = float((out @ GRAY_WEIGHTS).mean())
    out = gray_mean + (out - gray_mean) * fc
    gray = (out @ GRAY_WEIGHTS)[..., None]
    return gray + (out - gray) * fs


def perturb_with_warp(
    img: np.ndarray, cfg: PerturbConfig, rng: np.random.Generator
) -> tuple[np.ndarray, ElasticWarp | None]:
    """Jitter -> elastic deformation -> blur, in that fixed order.

    Returns the perturbed image and the elastic displacement actually used
    (None when elastic is disabled) so label grids can be aligned to it.
    """
    out = np.asarray(img, dtype=np.float64)
    warp = None
    if cfg.enable_jitter:
        out = _color_jitter(out, cfg, rng)
    if cfg.enable_elastic:
        warp = _elastic_field(out.shape[:2], cfg.elastic_grid, cfg.elastic_sigma, rng)
        yy, xx = np.meshgrid(np.arange(out.shape[0]), np.arange(out.shape[1]), indexing="ij")
        out = _bilinear_sample(out, yy + warp.dy, xx + warp.dx)
    if cfg.enable_blur:
        sigma = rng.uniform(cfg.blur_sigma[0], cfg.blur_sigma[1])
        if sigma > 1e-3:
            out = _gaussian_blur(out, sigma)
    return np.clip(out, 0.0, 1.0), warp


def perturb(img: np.ndarray, cfg: PerturbConfig, rng: np.random.Generator) -> np.ndarray:
    return perturb_with_warp(img, cfg, rng)[0]


def valid_pseudo_mask(pl: PseudoLabelMap, thresholds: CategoryThresholds) -> np.ndarray:
    return pl.confidence >= thresholds.t[pl.labels]


def warp_pseudo_targets(
    pl: PseudoLabelMap, thresholds: CategoryThresholds, warp: ElasticWarp | None
) -> tuple[np.ndarray, np.ndarray]:
    """Pseudo-labels and validity mask, nearest-resampled through the warp."""
    mask = valid_pseudo_mask(pl, thresholds)
    if warp is None:
        return pl.labels, mask
    if warp.dy.shape != pl.labels.shape or warp.dx.shape != pl.labels.shape:
        raise WarpMismatchError(
            f"warp shape {warp.dy.shape} does not match labels {pl.labels.shape}"
        )
    yn, xn = _nearest_indices(pl.labels.shape, warp)
    return pl.labels[yn, xn], mask[yn, xn]


def consistency_loss(
    pl: PseudoLabelMap,
    thresholds: CategoryThresholds,
    perturbed_probs: np.ndarray,
    warp: ElasticWarp | None = None,
) -> float:
    """Summed cross-entropy against valid pseudo-labels on the perturbed prediction."""
    probs = np.asarray(perturbed_probs, dtype=np.float64)
    if probs.shape[:2] != pl.labels.shape:
        raise WarpMismatchError(
            f"probability map {probs.shape[:2]} does not match labels {pl.labels.shape}"
        )
    labels_w, mask_w = warp_pseudo_targets(pl, thresholds, warp)
    picked = np.take_along_axis(probs, labels_w[..., None], axis=-1)[..., 0]
    ce = -np.log(np.maximum(picked, 1e-300))
    return float(ce[mask_w].sum())


def consistency_loss_grad(
    pl: PseudoLabelMap,
    thresholds: CategoryThresholds,
    perturbed_probs: np.ndarray,
    warp: ElasticWarp | None = None,
) -> np.ndarray:
    """Gradient w.r.t. the perturbed logits: (softmax - onehot) on valid pixels."""
    probs = np.asarray(perturbed_probs, dtype=np.float64)
    if probs.shape[:2] != pl.labels.shape:
        raise WarpMismatchError(
            f"probability map {probs.shape[:2]} does not match labels {pl.labels.shape}"
        )
    labels_w, mask_w = warp_pseudo_targets(pl, thresholds, warp)
    grad = probs.copy()
    h, w, _ = probs.shape
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    grad[yy, xx, labels_w] -= 1.0
    return grad * mask_w[..., None]


def save_pseudo_labels(pl: PseudoLabelMap, label_path, confidence_path) -> None:
    """Persist as an 8-bit label raster plus a 16-bit confidence raster."""
    imgio.save_label_map(pl.labels.astype(np.uint8), label_path)
    imgio.save_confidence_map(pl.confidence, confidence_path)
