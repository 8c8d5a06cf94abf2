import math

import numpy as np
import pytest
from conftest import central_difference, relative_gradient_error

from domalign import (
    IGNORE_LABEL,
    CategoryCenters,
    TripletConfig,
    compute_category_centers,
    triplet_loss,
    triplet_loss_grad,
)
from domalign.errors import AllClassesAbsentError, SingleClassError


def scalar_centers(feats, labels, class_count):
    """Naive two-pass reference: per-class sums, then normalize."""
    dim = len(feats[0])
    centers = []
    present = []
    for c in range(class_count):
        members = [f for f, y in zip(feats, labels) if y == c]
        if not members:
            centers.append([0.0] * dim)
            present.append(False)
            continue
        mean = [sum(f[d] for f in members) / len(members) for d in range(dim)]
        norm = math.sqrt(sum(v * v for v in mean))
        centers.append([v / norm for v in mean])
        present.append(True)
    return np.array(centers), np.array(present)


def scalar_triplet(feats, labels, centers, present, alpha):
    """Exhaustive per-pixel max-over-classes reference."""
    total = 0.0
    count = 0
    for f, y in zip(feats, labels):
        if y == IGNORE_LABEL:
            continue
        count += 1
        norm = math.sqrt(sum(v * v for v in f))
        g = [v / norm for v in f]
        d_pos = math.sqrt(sum((gv - cv) ** 2 for gv, cv in zip(g, centers[y])))
        best = None
        for c in range(len(centers)):
            if c == y or not present[c]:
                continue
            d_c = math.sqrt(sum((gv - cv) ** 2 for gv, cv in zip(g, centers[c])))
            if best is None or d_c < best:
                best = d_c
        total += max(d_pos - best + alpha, 0.0)
    return total / count if count else 0.0


def test_center_single_pixel():
    v = np.array([[3.0, 4.0]])
    result = compute_category_centers(v, np.array([0]), 1)
    np.testing.assert_allclose(result.centers[0], [0.6, 0.8])


def test_center_two_pixels_analytic():
    feats = np.array([[1.0, 0.0], [0.0, 1.0]])
    result = compute_category_centers(feats, np.array([0, 0]), 2)
    np.testing.assert_allclose(result.centers[0], [1 / math.sqrt(2)] * 2)
    assert result.present.tolist() == [True, False]


def test_centers_match_scalar_reference():
    rng = np.random.default_rng(0)
    for _ in range(10):
        feats = rng.normal(size=(30, 5))
        labels = rng.integers(0, 4, size=30)
        got = compute_category_centers(feats, labels, 4)
        want_centers, want_present = scalar_centers(feats, labels, 4)
        np.testing.assert_allclose(got.centers, want_centers, atol=1e-10)
        np.testing.assert_array_equal(got.present, want_present)


def test_centers_exclude_ignore_and_unit_norm():
    rng = np.random.default_rng(1)
    feats = rng.normal(size=(20, 4))
    labels = rng.integers(0, 3, size=20)
    labels[::4] = IGNORE_LABEL
    result = compute_category_centers(feats, labels, 3)
    keep = labels != IGNORE_LABEL
    want, _ = scalar_centers(feats[keep], labels[keep], 3)
    np.testing.assert_allclose(result.centers, want, atol=1e-10)
    norms = np.linalg.norm(result.centers[result.present], axis=1)
    np.testing.assert_allclose(norms, 1.0, atol=1e-9)


def test_all_absent_raises():
    with pytest.raises(AllClassesAbsentError):
        compute_category_centers(np.ones((3, 2)), np.full(3, IGNORE_LABEL), 2)


def _antipodal_centers():
    centers = np.array([[1.0, 0.0], [-1.0, 0.0]])
    return CategoryCenters(centers, np.array([True, True]))


def test_triplet_at_own_center_antipodal():
    centers = _antipodal_centers()
    feats = np.array([[2.0, 0.0]])  # normalizes onto center 0; d_neg = 2
    loss = triplet_loss(feats, np.array([0]), centers, TripletConfig(alpha=0.2))
    assert loss == pytest.approx(0.0, abs=1e-12)


def test_triplet_equidistant_gives_alpha():
    centers = _antipodal_centers()
    feats = np.array([[0.0, 1.0]])  # equidistant from both centers
    loss = triplet_loss(feats, np.array([0]), centers, TripletConfig(alpha=0.2))
    assert loss == pytest.approx(0.2, abs=1e-12)


def test_triplet_matches_scalar_reference():
    rng = np.random.default_rng(2)
    for _ in range(10):
        feats = rng.normal(size=(64, 8))
        labels = rng.integers(0, 4, size=64)
        centers = compute_category_centers(feats, labels, 4)
        cfg = TripletConfig(alpha=0.2)
        got = triplet_loss(feats, labels, centers, cfg)
        want = scalar_triplet(feats, labels, centers.centers, centers.present, cfg.alpha)
        assert got == pytest.approx(want, abs=1e-10)


def test_triplet_ignores_sentinel_pixels():
    rng = np.random.default_rng(3)
    feats = rng.normal(size=(12, 4))
    labels = rng.integers(0, 3, size=12)
    centers = compute_category_centers(feats, labels, 3)
    cfg = TripletConfig(alpha=0.3)
    base = triplet_loss(feats, labels, centers, cfg)
    extended = np.vstack([feats, rng.normal(size=(4, 4))])
    extended_labels = np.concatenate([labels, np.full(4, IGNORE_LABEL)])
    assert triplet_loss(extended, extended_labels, centers, cfg) == pytest.approx(base, abs=1e-12)


def test_triplet_single_class_raises():
    centers = CategoryCenters(np.array([[1.0, 0.0], [0.0, 0.0]]), np.array([True, False]))
    with pytest.raises(SingleClassError):
        triplet_loss(np.ones((2, 2)), np.zeros(2, dtype=int), centers, TripletConfig())


def test_triplet_scale_invariance_and_orthogonal_grad():
    rng = np.random.default_rng(4)
    feats = rng.normal(size=(16, 6))
    labels = rng.integers(0, 3, size=16)
    centers = compute_category_centers(rng.normal(size=(60, 6)), rng.integers(0, 3, 60), 3)
    cfg = TripletConfig(alpha=0.4)
    loss = triplet_loss(feats, labels, centers, cfg)
    for t in (0.5, 2.0, 7.3):
        scaled = feats.copy()
        scaled[3] *= t
        assert triplet_loss(scaled, labels, centers, cfg) == pytest.approx(loss, rel=1e-10)
    grad = triplet_loss_grad(feats, labels, centers, cfg)
    dots = (grad * feats).sum(axis=1)
    assert np.abs(dots).max() <= 1e-8


def test_triplet_grad_zero_when_hinges_inactive():
    centers = _antipodal_centers()
    feats = np.array([[5.0, 0.0], [-3.0, 0.0]])
    labels = np.array([0, 1])
    grad = triplet_loss_grad(feats, labels, centers, TripletConfig(alpha=0.2))
    assert np.abs(grad).max() == 0.0


def test_triplet_grad_finite_differences_away_from_kinks():
    cfg = TripletConfig(alpha=0.5)
    checked = 0
    for seed in range(60):
        rng = np.random.default_rng(seed)
        feats = rng.normal(size=(6, 5))
        labels = rng.integers(0, 3, size=6)
        centers = compute_category_centers(rng.normal(size=(40, 5)), rng.integers(0, 3, 40), 3)
        _, _, _, d_pos, d_neg, _, terms = _hinge_pieces(feats, labels, centers, cfg)
        # Skip instances near hinge kinks or with near-tied negatives.
        if np.abs(terms).min() < 1e-3 or _near_tie(feats, labels, centers):
            continue
        checked += 1
        grad = triplet_loss_grad(feats, labels, centers, cfg)
        fd = central_difference(lambda f: triplet_loss(f, labels, centers, cfg), feats.copy())
        assert relative_gradient_error(grad, fd) <= 1e-4
    assert checked >= 20


def _hinge_pieces(feats, labels, centers, cfg):
    from domalign.categories import _hinge_terms

    return _hinge_terms(np.asarray(feats, float), np.asarray(labels), centers, cfg.alpha)


def _near_tie(feats, labels, centers, tol=1e-3):
    normalized = feats / np.linalg.norm(feats, axis=1, keepdims=True)
    diffs = normalized[:, None, :] - centers.centers[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))
    dists[:, ~centers.present] = np.inf
    for i, y in enumerate(labels):
        row = dists[i].copy()
        row[y] = np.inf
        order = np.sort(row[np.isfinite(row)])
        if len(order) >= 2 and order[1] - order[0] < tol:
            return True
    return False
