"""Normalized-cut spectral clustering over an affinity matrix."""

from __future__ import annotations

import numpy as np

from .affinity import AffinityMatrix
from .core import ConfigError, NumericalError, RandomStream

_RESIDUAL_TOL = 1e-8


def normalized_laplacian(aff: AffinityMatrix) -> np.ndarray:
    """L = I - D^{-1/2} A D^{-1/2}, symmetrized exactly."""
    vals = aff.values
    degrees = vals.sum(axis=1)
    inv_root = 1.0 / np.sqrt(degrees)
    lap = -(inv_root[:, None] * vals * inv_root[None, :])
    np.fill_diagonal(lap, lap.diagonal() + 1.0)
    return (lap + lap.T) / 2.0


def eigen_smallest(matrix: np.ndarray, k: int):
    """k smallest eigenpairs of a symmetric matrix, values ascending.

    Each eigenvector is sign-fixed so its largest-magnitude entry is positive,
    and its residual ||Av - lv|| must stay below 1e-8.
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ConfigError("eigen_smallest needs a square matrix")
    if not 1 <= k <= matrix.shape[0]:
        raise ConfigError(f"k={k} out of range for n={matrix.shape[0]}")
    try:
        values, vectors = np.linalg.eigh(matrix)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    values = values[:k].copy()
    vectors = vectors[:, :k].copy()
    for j in range(k):
        lead = np.argmax(np.abs(vectors[:, j]))
        if vectors[lead, j] < 0:
            vectors[:, j] = -vectors[:, j]
    residuals = np.linalg.norm(matrix @ vectors - vectors * values, axis=0)
    if residuals.max() > _RESIDUAL_TOL:
        raise NumericalError(
            f"eigenpair residual {residuals.max():.3e} exceeds {_RESIDUAL_TOL}")
    return values, vectors


def _plusplus_init(X, k, gen):
    n = X.shape[0]
    centers = np.empty((k, X.shape[1]))
    centers[0] = X[int(gen.integers(n))]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total > 0.0:
            idx = int(gen.choice(n, p=d2 / total))
        else:
            idx = int(gen.integers(n))
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    return centers


def _lloyd(X, centers, max_iter):
    n = X.shape[0]
    k = centers.shape[0]
    labels = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        assignment = d2.argmin(axis=1)
        counts = np.bincount(assignment, minlength=k)
        empty = np.flatnonzero(counts == 0)
        if empty.size:
            # hand each empty cluster the point farthest from its current center
            far_order = np.argsort(-d2[np.arange(n), assignment], kind="stable")
            for slot, sample in zip(empty, far_order):
                centers[slot] = X[sample]
            labels = None
            continue
        if labels is not None and np.array_equal(assignment, labels):
            break
        labels = assignment
        for j in range(k):
            centers[j] = X[labels == j].mean(axis=0)
    if labels is None:
        labels = assignment
    wcss = float(((X - centers[labels]) ** 2).sum())
    return labels.astype(np.int64), wcss


def kmeans(X, k: int, rng: RandomStream, n_restarts: int = 10,
           max_iter: int = 300) -> np.ndarray:
    """Lloyd iterations from distance-proportional seeding; best of n_restarts.

    Assignment ties go to the lowest center index; restarts tie toward the
    earliest run, so the result is a pure function of (X, k, rng state).
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ConfigError("kmeans needs a non-empty 2-d array")
    if not 1 <= k <= X.shape[0]:
        raise ConfigError(f"k={k} out of range for n={X.shape[0]}")
    best_labels = None
    best_wcss = np.inf
    for _ in range(n_restarts):
        centers = _plusplus_init(X, k, rng.gen)
        labels, wcss = _lloyd(X, centers, max_iter)
        if wcss < best_wcss:
            best_labels = labels
            best_wcss = wcss
    return best_labels


def spectral_cluster(aff: AffinityMatrix, k: int, rng: RandomStream) -> np.ndarray:
    """Cluster rows of the row-normalized k-dimensional spectral embedding.

    Rows whose embedding is exactly zero cannot be normalized and are placed
    in cluster 0.
    """
    lap = normalized_laplacian(aff)
    _, vectors = eigen_smallest(lap, k)
    norms = np.linalg.norm(vectors, axis=1)
    alive = norms > 0.0
    embedding = vectors.copy()
    embedding[alive] /= norms[alive, None]
    labels = kmeans(embedding, k, rng)
    labels[~alive] = 0
    return labels
