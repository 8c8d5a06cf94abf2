"""Synthetic shifted-domain fixtures for the toy adaptation pipeline.

Scenes are colored shapes (rectangles and ellipses) over a background class,
rendered twice from the same generative process: the target pool stays clean
(labels withheld, except a private held-out set used only for evaluation),
while the source pool passes through a configurable photometric shift (gamma
on L, additive chroma offsets) and a texture shift (additive high-frequency
noise), emulating the domain gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .colorspace import lab_to_rgb, rgb_to_lab


@dataclass
class SyntheticDomainSpec:
    class_count: int = 4
    image_size: tuple[int, int] = (48, 48)
    shapes_per_image: tuple[int, int] = (3, 5)
    n_source: int = 10
    n_target: int = 10
    n_eval: int = 6
    pixel_noise: float = 0.03
    illumination: float = 0.06
    ladder_range: tuple[float, float] = (0.25, 0.82)
    ladder_chroma: float = 0.06
    photometric_gamma: float = 0.6
    gamma_spread: float = 0.0
    chroma_shift: tuple[float, float] = (0.05, -0.04)
    chroma_spread: float = 0.0
    texture_noise: float = 0.12
    texture_spread: float = 0.0
    seed: int = 0


@dataclass
class AdaptationData:
    """In-memory dataset: labeled shifted source, unlabeled target, private eval."""

    source_images: list = field(default_factory=list)
    source_labels: list = field(default_factory=list)
    target_images: list = field(default_factory=list)
    eval_images: list = field(default_factory=list)
    eval_labels: list = field(default_factory=list)
    class_count: int = 2


def _class_palette(spec: SyntheticDomainSpec, rng: np.random.Generator) -> np.ndarray:
    """Class colors on a lightness ladder with small chroma offsets.

    Classes are separated primarily by lightness (road-dark to sky-bright),
    so a nonlinear lightness shift maps one class's appearance onto its
    neighbor's: the confusion a photometric gap actually causes.
    """
    lo, hi = spec.ladder_range
    lightness = np.linspace(lo, hi, spec.class_count) + rng.uniform(
        -0.02, 0.02, spec.class_count
    )
    lab = np.full((spec.class_count, 3), 0.5)
    lab[:, 0] = lightness
    lab[:, 1:] += rng.uniform(-spec.ladder_chroma, spec.ladder_chroma, (spec.class_count, 2))
    return lab_to_rgb(lab[None, :, :])[0]


def _paint_scene(spec: SyntheticDomainSpec, palette: np.ndarray, rng: np.random.Generator):
    h, w = spec.image_size
    labels = np.zeros((h, w), dtype=np.uint8)
    lo, hi = spec.shapes_per_image
    yy, xx = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    for _ in range(rng.integers(lo, hi + 1)):
        cls = int(rng.integers(1, spec.class_count))
        cy, cx = rng.uniform(0.15, 0.85) * h, rng.uniform(0.15, 0.85) * w
        ry, rx = rng.uniform(0.1, 0.3) * h, rng.uniform(0.1, 0.3) * w
        if rng.random() < 0.5:
            mask = (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
        else:
            mask = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        labels[mask] = cls
    img = palette[labels]
    direction = rng.uniform(0.0, 2.0 * np.pi)
    ramp = (yy * np.sin(direction) + xx * np.cos(direction)) / max(h, w)
    img = img + spec.illumination * (ramp - ramp.mean())[..., None]
    img = img + rng.normal(0.0, spec.pixel_noise, size=img.shape)
    return np.clip(img, 0.02, 0.98), labels


def apply_domain_shift(
    img: np.ndarray, spec: SyntheticDomainSpec, rng: np.random.Generator
) -> np.ndarray:
    """Photometric (gamma + chroma offset) then texture (high-frequency noise) shift.

    The spread fields randomize the shift per image, so the gap is a
    distribution over imaging conditions rather than one fixed transform.
    """
    gamma = spec.photometric_gamma + rng.uniform(-1.0, 1.0) * spec.gamma_spread
    da = spec.chroma_shift[0] + rng.uniform(-1.0, 1.0) * spec.chroma_spread
    db = spec.chroma_shift[1] + rng.uniform(-1.0, 1.0) * spec.chroma_spread
    amp = max(spec.texture_noise + rng.uniform(-1.0, 1.0) * spec.texture_spread, 0.0)
    lab = rgb_to_lab(img)
    lab[..., 0] = lab[..., 0] ** max(gamma, 0.05)
    lab[..., 1] = np.clip(lab[..., 1] + da, 0.0, 1.0)
    lab[..., 2] = np.clip(lab[..., 2] + db, 0.0, 1.0)
    shifted = lab_to_rgb(lab)
    if amp > 0:
        noise = rng.uniform(-amp, amp, size=img.shape[:2])
        shifted = shifted + noise[..., None]
    return np.clip(shifted, 0.0, 1.0)


def generate_synthetic_domains(
    spec: SyntheticDomainSpec, rng: np.random.Generator
) -> AdaptationData:
    """Render source (shifted, labeled), target (clean, unlabeled) and eval pools."""
    palette = _class_palette(spec, rng)
    data = AdaptationData(class_count=spec.class_count)
    for _ in range(spec.n_source):
        img, labels = _paint_scene(spec, palette, rng)
        data.source_images.append(apply_domain_shift(img, spec, rng))
        data.source_labels.append(labels)
    for _ in range(spec.n_target):
        img, _ = _paint_scene(spec, palette, rng)
        data.target_images.append(img)
    for _ in range(spec.n_eval):
        img, labels = _paint_scene(spec, palette, rng)
        data.eval_images.append(img)
        data.eval_labels.append(labels)
    return data
