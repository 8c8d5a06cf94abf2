"""Category centers and the category-oriented triplet loss.

Centers are L2-normalized per-class mean features; the loss is a hinge on the
margin between each normalized feature's distance to its own center and to the
hardest (closest) other center:

    (1/N_s) sum_j max(||G(x_j) - f_y|| - min_{c != y} ||G(x_j) - f_c|| + alpha, 0)

Centers are stage constants: no gradient flows into them. Applied to source
labels only; pseudo-labels are deliberately excluded.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AllClassesAbsentError, SingleClassError
from .imgio import IGNORE_LABEL

_TINY = 1e-12


@dataclass
class CategoryCenters:
    centers: np.ndarray       # (M_c, D), unit rows where present
    present: np.ndarray       # (M_c,) bool


@dataclass
class TripletConfig:
    alpha: float = 0.2


def compute_category_centers(
    feats: np.ndarray, labels: np.ndarray, class_count: int
) -> CategoryCenters:
    """Per-class L2-normalized mean features; IGNORE pixels are excluded."""
    feats = np.asarray(feats, dtype=np.float64).reshape(-1, feats.shape[-1])
    labels = np.asarray(labels).reshape(-1)
    centers = np.zeros((class_count, feats.shape[1]))
    present = np.zeros(class_count, dtype=bool)
    for c in range(class_count):
        members = feats[labels == c]
        if len(members) == 0:
            continue
        mean = members.mean(axis=0)
        norm = np.linalg.norm(mean)
        if norm <= _TINY:
            continue
        centers[c] = mean / norm
        present[c] = True
    if not present.any():
        raise AllClassesAbsentError("no class has any labeled pixel")
    return CategoryCenters(centers, present)


def _normalized_features(feats: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(feats, axis=1)
    return feats / np.maximum(norms, _TINY)[:, None], norms


def _hinge_terms(feats, labels, centers: CategoryCenters, alpha: float):
    """Per-pixel hinge values plus the pieces the gradient needs."""
    valid = labels != IGNORE_LABEL
    normalized, norms = _normalized_features(feats)
    # Distances are computed from explicit differences so tests can reproduce
    # them with a naive scalar implementation at 1e-10.
    diffs = normalized[:, None, :] - centers.centers[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))
    dists[:, ~centers.present] = np.inf
    d_pos = dists[np.arange(len(feats)), labels.clip(0, len(centers.present) - 1)]
    masked = dists.copy()
    masked[np.arange(len(feats)), labels.clip(0, len(centers.present) - 1)] = np.inf
    hardest = np.argmin(masked, axis=1)
    d_neg = masked[np.arange(len(feats)), hardest]
    terms = np.maximum(d_pos - d_neg + alpha, 0.0)
    return valid, normalized, norms, d_pos, d_neg, hardest, terms


def triplet_loss(
    feats: np.ndarray, labels: np.ndarray, centers: CategoryCenters, cfg: TripletConfig
) -> float:
    """Mean hinge over contributing (non-IGNORE) pixels."""
    feats = np.asarray(feats, dtype=np.float64).reshape(-1, feats.shape[-1])
    labels = np.asarray(labels).reshape(-1)
    if centers.present.sum() < 2:
        raise SingleClassError("triplet loss needs at least two present classes")
    valid, _, _, _, _, _, terms = _hinge_terms(feats, labels, centers, cfg.alpha)
    if not valid.any():
        return 0.0
    return float(terms[valid].sum() / valid.sum())


def triplet_loss_grad(
    feats: np.ndarray, labels: np.ndarray, centers: CategoryCenters, cfg: TripletConfig
) -> np.ndarray:
    """Subgradient w.r.t. each input feature; zero rows where the hinge is inactive.

    The normalization Jacobian makes every row orthogonal to its feature, so
    rescaling a feature never changes the loss.
    """
    feats = np.asarray(feats, dtype=np.float64).reshape(-1, feats.shape[-1])
    labels = np.asarray(labels).reshape(-1)
    if centers.present.sum() < 2:
        raise SingleClassError("triplet loss needs at least two present classes")
    valid, normalized, norms, d_pos, d_neg, hardest, terms = _hinge_terms(
        feats, labels, centers, cfg.alpha
    )
    grad = np.zeros_like(feats)
    count = int(valid.sum())
    if count == 0:
        return grad
    idx = np.flatnonzero(valid & (terms > 0))
    if idx.size == 0:
        return grad
    g = normalized[idx]
    pos_diff = g - centers.centers[labels[idx]]
    neg_diff = g - centers.centers[hardest[idx]]
    pos_scale = np.where(d_pos[idx] > _TINY, 1.0 / np.maximum(d_pos[idx], _TINY), 0.0)
    neg_ok = np.isfinite(d_neg[idx]) & (d_neg[idx] > _TINY)
    neg_scale = np.where(neg_ok, 1.0 / np.maximum(d_neg[idx], _TINY), 0.0)
    g_hat = pos_diff * pos_scale[:, None] - neg_diff * neg_scale[:, None]
    # Jacobian of x -> x/||x||: (I - g g^T) / ||x||.
    tangential = g_hat - (g_hat * g).sum(axis=1, keepdims=True) * g
    grad[idx] = tangential / np.maximum(norms[idx], _TINY)[:, None]
    return grad / count
