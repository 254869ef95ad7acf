"""
evalmetrics_service.py
----------------------
Clustering readout and evaluation.

  spectral_clustering   symmetric normalized Laplacian of (G + G^T)/2, k smallest
                        eigenvectors, row-normalized embedding, k-means
  kmeans                Lloyd iterations from k-means++ seeds, best of several restarts
  clustering_accuracy   best one-to-one label matching (Hungarian on the confusion matrix)
  nmi                   normalized mutual information, geometric-mean normalization
  numerical_rank        smallest r whose leading squared singular values carry
                        strictly more than ``threshold`` of the total energy
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from joblib import Parallel, delayed
from numpy.typing import ArrayLike, NDArray
from scipy.optimize import linear_sum_assignment
from sklearn.cluster import kmeans_plusplus
from sklearn.metrics import normalized_mutual_info_score
from sklearn.metrics.cluster import contingency_matrix
from sklearn.metrics.pairwise import cosine_similarity

from app.core.errors import DegenerateAffinity, DimensionMismatch, LengthMismatch, ZeroMatrix
from app.core.seeding import spawn_seeds
from app.services.numerics_service import DenseMatrix, as_matrix, singular_values

logger = logging.getLogger(__name__)

NMI_VARIANT = "geometric"
LAPLACIAN_VARIANT = "symmetric-normalized, row-normalized embedding"
KMEANS_MAX_ITERS = 300
DEGREE_FLOOR = 1e-12


@dataclass
class KMeansResult:
    labels: NDArray[np.int64]
    centers: DenseMatrix
    inertia: float
    restart_inertias: list[float]
    best_restart: int


# ──────────────────────────────────────────────────────────────────────────────
# k-means
# ──────────────────────────────────────────────────────────────────────────────
def _assign(points: DenseMatrix, centers: DenseMatrix) -> tuple[NDArray[np.int64], NDArray[np.float64]]:
    dist = np.sum((points[:, None, :] - centers[None, :, :]) ** 2, axis=2)
    labels = np.argmin(dist, axis=1)  # lowest centroid index wins ties
    return labels, dist[np.arange(points.shape[0]), labels]


def _lloyd(points: DenseMatrix, k: int, seed: int) -> tuple[NDArray[np.int64], DenseMatrix, float]:
    centers, _ = kmeans_plusplus(points, n_clusters=k, random_state=seed)
    centers = centers.astype(np.float64)
    labels, sq = _assign(points, centers)
    for _ in range(KMEANS_MAX_ITERS):
        for j in range(k):
            members = labels == j
            if np.any(members):
                centers[j] = points[members].mean(axis=0)
            else:
                # re-seed an empty cluster at the point farthest from its centroid
                far = int(np.argmax(sq))
                centers[j] = points[far]
                sq[far] = 0.0
        new_labels, sq = _assign(points, centers)
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return labels, centers, float(np.sum(sq))


def run_kmeans(points: ArrayLike, k: int, restarts: int = 10, seed: int = 0, n_jobs: int = 1) -> KMeansResult:
    points = as_matrix(points)
    if points.shape[0] < k:
        raise DimensionMismatch(f"need at least k={k} points, got {points.shape[0]}")
    seeds = spawn_seeds(seed, restarts)
    runs = Parallel(n_jobs=n_jobs, prefer="threads")(delayed(_lloyd)(points, k, s) for s in seeds)
    inertias = [r[2] for r in runs]
    best = 0
    for i, value in enumerate(inertias):
        if value < inertias[best]:
            best = i
    labels, centers, inertia = runs[best]
    return KMeansResult(
        labels=labels.astype(np.int64),
        centers=centers,
        inertia=inertia,
        restart_inertias=inertias,
        best_restart=best,
    )


def kmeans(points: ArrayLike, k: int, restarts: int = 10, seed: int = 0, n_jobs: int = 1) -> NDArray[np.int64]:
    return run_kmeans(points, k, restarts, seed, n_jobs).labels


# ──────────────────────────────────────────────────────────────────────────────
# Spectral clustering
# ──────────────────────────────────────────────────────────────────────────────
def spectral_embedding(gamma: ArrayLike, k: int) -> DenseMatrix:
    G = as_matrix(gamma)
    n = G.shape[0]
    if G.shape != (n, n):
        raise DimensionMismatch(f"membership must be square, got {G.shape}")
    if not 1 <= k <= n:
        raise DimensionMismatch(f"k={k} must lie in [1, n={n}]")
    W = 0.5 * (G + G.T)
    degree = W.sum(axis=1)
    if np.any(degree <= DEGREE_FLOOR):
        raise DegenerateAffinity(f"{int(np.sum(degree <= DEGREE_FLOOR))} node(s) have zero degree")
    inv_sqrt = 1.0 / np.sqrt(degree)
    L = np.eye(n) - inv_sqrt[:, None] * W * inv_sqrt[None, :]
    L = 0.5 * (L + L.T)
    _, vectors = scipy.linalg.eigh(L, subset_by_index=[0, k - 1])
    norms = np.linalg.norm(vectors, axis=1)
    return vectors / np.maximum(norms, DEGREE_FLOOR)[:, None]


def spectral_clustering(
    gamma: ArrayLike,
    k: int,
    seed: int = 0,
    restarts: int = 10,
    n_jobs: int = 1,
) -> NDArray[np.int64]:
    embedding = spectral_embedding(gamma, k)
    return kmeans(embedding, k, restarts=restarts, seed=seed, n_jobs=n_jobs)


# ──────────────────────────────────────────────────────────────────────────────
# Label agreement
# ──────────────────────────────────────────────────────────────────────────────
def _check_pair(pred: ArrayLike, truth: ArrayLike) -> tuple[NDArray[np.int64], NDArray[np.int64]]:
    pred = np.asarray(pred, dtype=np.int64).ravel()
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if pred.size != truth.size:
        raise LengthMismatch(f"{pred.size} predicted labels vs {truth.size} true labels")
    if pred.size == 0:
        raise LengthMismatch("label vectors are empty")
    return pred, truth


def confusion_matrix(pred: ArrayLike, truth: ArrayLike) -> NDArray[np.int64]:
    """k_pred x k_true counts over the labels that actually occur."""
    pred, truth = _check_pair(pred, truth)
    return contingency_matrix(pred, truth).astype(np.int64)


def clustering_accuracy(pred: ArrayLike, truth: ArrayLike) -> float:
    counts = confusion_matrix(pred, truth)
    size = max(counts.shape)
    padded = np.zeros((size, size), dtype=np.int64)
    padded[: counts.shape[0], : counts.shape[1]] = counts
    rows, cols = linear_sum_assignment(-padded)
    return float(padded[rows, cols].sum()) / float(counts.sum())


def nmi(pred: ArrayLike, truth: ArrayLike) -> float:
    pred, truth = _check_pair(pred, truth)
    return float(normalized_mutual_info_score(truth, pred, average_method=NMI_VARIANT))


# ──────────────────────────────────────────────────────────────────────────────
# Representation diagnostics
# ──────────────────────────────────────────────────────────────────────────────
def numerical_rank(W: ArrayLike, threshold: float = 0.95) -> int:
    sigma = singular_values(W)
    energy = sigma**2
    total = float(np.sum(energy))
    if total <= 0.0:
        raise ZeroMatrix("numerical rank of an all-zero matrix is undefined")
    ratio = np.cumsum(energy) / total
    above = np.nonzero(ratio > threshold)[0]
    return int(above[0]) + 1 if above.size else int(sigma.size)


def per_cluster_ranks(Z: ArrayLike, truth: ArrayLike, threshold: float = 0.95) -> list[int]:
    Z = as_matrix(Z)
    truth = np.asarray(truth, dtype=np.int64).ravel()
    if truth.size != Z.shape[1]:
        raise LengthMismatch(f"{Z.shape[1]} feature columns vs {truth.size} labels")
    return [numerical_rank(Z[:, truth == label], threshold) for label in np.unique(truth)]


def cosine_similarity_matrix(Z: ArrayLike) -> DenseMatrix:
    """|z_i^T z_j| for unit-norm feature columns."""
    Z = as_matrix(Z)
    return np.abs(cosine_similarity(Z.T))
