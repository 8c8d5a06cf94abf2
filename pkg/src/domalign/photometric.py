"""Global photometric alignment.

Chroma channels are matched to a reference histogram by classic CDF matching;
lightness is gamma-corrected with the exponent solved per image pair so the
transformed source mean matches the reference mean, regularized toward 1:

    J(g) = (sum_b c_b^g p_b - mu_ref)^2 + beta * (g - 1)^2

with p the source lightness histogram and mu_ref the reference histogram mean,
both normalized to probability mass and evaluated at bin centers c_b.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .colorspace import Histogram, bin_centers, channel_histogram, lab_to_rgb, rgb_to_lab
from .errors import DegenerateSourceError, NonConvergenceError

_GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass
class GammaSolveConfig:
    beta: float = 0.01
    max_iters: int = 500
    step_size: float = 1.0
    tolerance: float = 1e-7
    gamma_bounds: tuple[float, float] = (0.2, 5.0)


@dataclass
class GammaResult:
    gamma: float
    objective: float
    iterations: int


def match_histogram(src_channel: np.ndarray, ref_hist: Histogram) -> np.ndarray:
    """Map a [0, 1] channel onto a reference histogram by CDF matching.

    Each value moves to the smallest bin whose reference CDF reaches the
    source CDF at the value's own bin: values whose bin maps to itself pass
    through unchanged, values in moved bins take the target bin's center. A
    constant channel is not an error: its single bin transports to the
    reference bin the CDF rule selects.
    """
    if ref_hist.total <= 0:
        raise ValueError("reference histogram is empty")
    src_hist = channel_histogram(src_channel)
    src_cdf = np.cumsum(src_hist.counts) / src_hist.total
    ref_cdf = np.cumsum(ref_hist.counts) / ref_hist.total
    src_cdf[-1] = ref_cdf[-1] = 1.0
    mapped = np.searchsorted(ref_cdf, src_cdf, side="left")
    mapped = np.minimum(mapped, len(ref_cdf) - 1)
    centers = bin_centers()
    values = np.asarray(src_channel, dtype=np.float64)
    idx = np.minimum((values * len(centers)).astype(np.int64), len(centers) - 1)
    out = centers[mapped[idx]]
    unmoved = mapped[idx] == idx
    out[unmoved] = values[unmoved]
    return out


def _objective_terms(hist: Histogram):
    p = hist.normalized()
    support = p > 0
    c = bin_centers()[support]
    return c, np.log(c), p[support]


def solve_gamma(src_L_hist: Histogram, ref_L_hist: Histogram, cfg: GammaSolveConfig) -> GammaResult:
    """Solve for the gamma exponent by damped gradient descent from g = 1.

    Each step backtracks until the objective decreases, so the objective is
    non-increasing across iterations and the returned value never exceeds the
    objective at g = 1. Falls back to a golden-section scan over gamma_bounds
    if descent exhausts its budget.
    """
    if src_L_hist.total <= 0 or ref_L_hist.total <= 0:
        raise ValueError("histograms must be nonempty")
    if src_L_hist.counts[1:].sum() == 0:
        raise DegenerateSourceError("all source lightness mass at zero")
    lo, hi = cfg.gamma_bounds
    _, log_c, weights = _objective_terms(src_L_hist)
    mu_ref = float(bin_centers() @ ref_L_hist.normalized())
    beta = cfg.beta

    def value(g: float) -> float:
        gap = np.exp(g * log_c) @ weights - mu_ref
        return gap * gap + beta * (g - 1.0) ** 2

    def value_grad(g: float) -> tuple[float, float]:
        powers = np.exp(g * log_c)
        gap = powers @ weights - mu_ref
        slope = (powers * log_c) @ weights
        return gap * gap + beta * (g - 1.0) ** 2, 2.0 * gap * slope + 2.0 * beta * (g - 1.0)

    gamma = 1.0
    best, grad = value_grad(gamma)
    step = cfg.step_size
    for iteration in range(1, cfg.max_iters + 1):
        if abs(grad) < 1e-15:
            return GammaResult(gamma, best, iteration - 1)
        moved = None
        while step > 1e-18:
            candidate = float(np.clip(gamma - step * grad, lo, hi))
            trial = value(candidate)
            if trial <= best and candidate != gamma:
                moved = candidate
                break
            if candidate == gamma:  # pinned at a bound
                moved = gamma
                trial = best
                break
            step *= 0.5
        if moved is None or moved == gamma:
            return GammaResult(gamma, best, iteration)
        delta = abs(moved - gamma)
        gamma, best = moved, trial
        _, grad = value_grad(gamma)
        step *= 1.3
        if delta <= cfg.tolerance:
            return GammaResult(gamma, best, iteration)

    # Descent budget exhausted: golden-section over the full bounds.
    a, b = lo, hi
    x1 = b - _GOLDEN * (b - a)
    x2 = a + _GOLDEN * (b - a)
    f1, f2 = value(x1), value(x2)
    for extra in range(1, cfg.max_iters + 1):
        if f1 < f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - _GOLDEN * (b - a)
            f1 = value(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + _GOLDEN * (b - a)
            f2 = value(x2)
        if b - a <= cfg.tolerance:
            gamma = 0.5 * (a + b)
            best = value(gamma)
            at_one = value(1.0)
            if at_one < best:
                gamma, best = 1.0, at_one
            return GammaResult(gamma, best, cfg.max_iters + extra)
    raise NonConvergenceError(
        f"gamma solve did not reach tolerance {cfg.tolerance} in {cfg.max_iters} iterations"
    )


def apply_gamma(L_channel: np.ndarray, gamma: float) -> np.ndarray:
    """Pixel-wise power law L**gamma; preserves [0, 1] range and rank order."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    return np.power(np.asarray(L_channel, dtype=np.float64), gamma)


def align_photometric_with_info(
    src: np.ndarray, ref: np.ndarray, cfg: GammaSolveConfig
) -> tuple[np.ndarray, GammaResult]:
    """Align src to ref in Lab space; returns the image and the gamma solve result."""
    src_lab = rgb_to_lab(src)
    ref_lab = rgb_to_lab(ref)
    result = solve_gamma(
        channel_histogram(src_lab[..., 0]), channel_histogram(ref_lab[..., 0]), cfg
    )
    out = np.empty_like(src_lab)
    out[..., 0] = apply_gamma(src_lab[..., 0], result.gamma)
    out[..., 1] = match_histogram(src_lab[..., 1], channel_histogram(ref_lab[..., 1]))
    out[..., 2] = match_histogram(src_lab[..., 2], channel_histogram(ref_lab[..., 2]))
    return lab_to_rgb(out), result


def align_photometric(src: np.ndarray, ref: np.ndarray, cfg: GammaSolveConfig) -> np.ndarray:
    """Gamma-corrected L plus histogram-matched a/b, composed back to RGB."""
    return align_photometric_with_info(src, ref, cfg)[0]
