"""Global manifold alignment.

The source feature manifold is represented by K-means atoms in a PCA
subspace. A feature x is projected onto the atoms through scaled dot-product
attention with two trainable low-rank maps:

    w = softmax((R(x) W1^T)(W2 z^T) / sqrt(N_z)),    x_hat' = w^T z

and the alignment loss is the squared reconstruction residual
sum_j ||R_inv(x_hat'_j) - x_j||^2. Atoms and the PCA model are frozen within
a training stage; gradients flow to the input features and to W1/W2 only.
All computation is float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateDataError,
    DimensionMismatchError,
    InsufficientCorrectPixelsError,
)
from .imgio import IGNORE_LABEL


@dataclass
class PcaModel:
    mean: np.ndarray          # (D,)
    components: np.ndarray    # (D', D), orthonormal rows, decreasing eigenvalue
    explained_ratio: float


@dataclass
class AtomSet:
    atoms: np.ndarray         # (N_z, D')
    inertia: float
    inertia_history: list[float] = field(default_factory=list)


@dataclass
class ManifoldProjector:
    W1: np.ndarray            # (N_h, D')
    W2: np.ndarray            # (N_h, D')
    atoms: AtomSet
    pca: PcaModel


def sample_correct_features(
    feats: np.ndarray,
    probs: np.ndarray,
    labels: np.ndarray,
    n: int,
    rng: np.random.Generator,
) -> np.ndarray:
    """Uniform sample without replacement from correctly classified pixels."""
    feats = feats.reshape(-1, feats.shape[-1])
    probs = probs.reshape(-1, probs.shape[-1])
    labels = np.asarray(labels).reshape(-1)
    correct = np.flatnonzero((np.argmax(probs, axis=1) == labels) & (labels != IGNORE_LABEL))
    if n > correct.size:
        raise InsufficientCorrectPixelsError(
            f"requested {n} samples but only {correct.size} pixels are correct"
        )
    chosen = rng.choice(correct, size=n, replace=False)
    return feats[chosen].astype(np.float64)


def fit_pca(X: np.ndarray, target_energy: float = 0.9, n_components: int | None = None) -> PcaModel:
    """PCA keeping the smallest dimension reaching target_energy explained variance.

    Pass n_components to fix the reduced dimension explicitly instead.
    """
    X = np.asarray(X, dtype=np.float64)
    mean = X.mean(axis=0)
    centered = X - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    variances = svals**2
    total = variances.sum()
    if total <= 1e-12:
        raise DegenerateDataError("feature matrix has no variance")
    cumulative = np.cumsum(variances) / total
    if n_components is None:
        k = int(np.searchsorted(cumulative, target_energy - 1e-12) + 1)
    else:
        k = min(n_components, len(svals))
    return PcaModel(mean=mean, components=vt[:k].copy(), explained_ratio=float(cumulative[k - 1]))


def pca_reduce(x: np.ndarray, m: PcaModel) -> np.ndarray:
    """components @ (x - mean); accepts a vector or a stack of rows."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != m.mean.shape[0]:
        raise DimensionMismatchError(f"expected dim {m.mean.shape[0]}, got {x.shape[-1]}")
    return (x - m.mean) @ m.components.T


def pca_reconstruct(x_reduced: np.ndarray, m: PcaModel) -> np.ndarray:
    """components^T @ x' + mean; accepts a vector or a stack of rows."""
    x_reduced = np.asarray(x_reduced, dtype=np.float64)
    if x_reduced.shape[-1] != m.components.shape[0]:
        raise DimensionMismatchError(
            f"expected dim {m.components.shape[0]}, got {x_reduced.shape[-1]}"
        )
    return x_reduced @ m.components + m.mean


def _kmeans_pp_init(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[rng.integers(n)]
    dist_sq = ((X - centers[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = dist_sq.sum()
        if total <= 0:
            centers[i] = X[rng.integers(n)]
            continue
        centers[i] = X[rng.choice(n, p=dist_sq / total)]
        dist_sq = np.minimum(dist_sq, ((X - centers[i]) ** 2).sum(axis=1))
    return centers


def kmeans_atoms(
    RX: np.ndarray, n_z: int, rng: np.random.Generator, max_iters: int = 100
) -> AtomSet:
    """Lloyd's algorithm with k-means++ seeding until the assignment fixpoint.

    Empty clusters are reseeded to the point farthest from its assigned center.
    """
    X = np.asarray(RX, dtype=np.float64)
    if X.shape[0] < n_z:
        raise ValueError(f"need at least {n_z} rows, got {X.shape[0]}")
    centers = _kmeans_pp_init(X, n_z, rng)
    assignment = None
    history = []
    for _ in range(max_iters):
        dists = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assignment = np.argmin(dists, axis=1)
        point_cost = dists[np.arange(len(X)), new_assignment]
        for c in range(n_z):
            members = new_assignment == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
            else:
                farthest = int(np.argmax(point_cost))
                centers[c] = X[farthest]
                new_assignment[farthest] = c
                point_cost[farthest] = 0.0
        history.append(float(((X - centers[new_assignment]) ** 2).sum()))
        if assignment is not None and np.array_equal(assignment, new_assignment):
            break
        assignment = new_assignment
    return AtomSet(atoms=centers, inertia=history[-1], inertia_history=history)


def init_manifold_projector(
    pca: PcaModel, atoms: AtomSet, n_h: int, rng: np.random.Generator
) -> ManifoldProjector:
    """Uniform init with scale 1/sqrt(D') so initial attention logits are O(1)."""
    d_reduced = pca.components.shape[0]
    scale = 1.0 / np.sqrt(d_reduced)
    w1 = rng.uniform(-scale, scale, size=(n_h, d_reduced))
    w2 = rng.uniform(-scale, scale, size=(n_h, d_reduced))
    return ManifoldProjector(W1=w1, W2=w2, atoms=atoms, pca=pca)


def _softmax_rows(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=1, keepdims=True)


def _attention_forward(X: np.ndarray, proj: ManifoldProjector):
    Z = proj.atoms.atoms
    reduced = pca_reduce(X, proj.pca)
    queries = reduced @ proj.W1.T
    keys = proj.W2 @ Z.T
    logits = (queries @ keys) / np.sqrt(Z.shape[0])
    weights = _softmax_rows(logits)
    projected = weights @ Z
    return reduced, queries, keys, logits, weights, projected


def manifold_project(x: np.ndarray, proj: ManifoldProjector) -> tuple[np.ndarray, np.ndarray]:
    """Attention weights over the atoms and the projected reduced-space vector."""
    x = np.asarray(x, dtype=np.float64)
    _, _, _, _, weights, projected = _attention_forward(x[None, :], proj)
    return weights[0], projected[0]


def manifold_loss(batch: np.ndarray, proj: ManifoldProjector) -> float:
    """Sum of squared residuals between inputs and their lifted projections."""
    X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    _, _, _, _, _, projected = _attention_forward(X, proj)
    residual = pca_reconstruct(projected, proj.pca) - X
    return float((residual**2).sum())


def manifold_loss_grad(
    batch: np.ndarray, proj: ManifoldProjector
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic gradients of manifold_loss w.r.t. the batch features, W1 and W2."""
    X = np.atleast_2d(np.asarray(batch, dtype=np.float64))
    Z = proj.atoms.atoms
    scale = 1.0 / np.sqrt(Z.shape[0])
    reduced, queries, keys, _, weights, projected = _attention_forward(X, proj)
    residual = pca_reconstruct(projected, proj.pca) - X

    g_projected = 2.0 * residual @ proj.pca.components.T
    g_weights = g_projected @ Z.T
    g_logits = weights * (g_weights - (weights * g_weights).sum(axis=1, keepdims=True))
    g_queries = g_logits @ keys.T * scale
    g_reduced = g_queries @ proj.W1
    grad_x = -2.0 * residual + g_reduced @ proj.pca.components
    grad_w1 = g_queries.T @ reduced
    grad_w2 = (queries.T @ g_logits * scale) @ Z
    return grad_x, grad_w1, grad_w2
